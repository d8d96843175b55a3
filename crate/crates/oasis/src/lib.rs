//! Memory-based video object segmentation with edge-prior structure
//! refinement and an evidential uncertainty loss.
//!
//! The algorithmic pieces that need no tensor library live in `oasis-core`;
//! this crate adds the network, training, evaluation and file formats.

#![deny(missing_debug_implementations)]

pub mod cli;
pub mod config;
pub mod engine;
pub mod eval;
pub mod io;
pub mod losses;
mod error;
pub mod nn;

pub use error::{Error, Result};
