//! Allocation-only core of the OASIS video object segmentation toolkit.
//!
//! Everything here is pure computation over owned buffers: the data model
//! (frames, masks, structure maps), the Canny edge prior and ground-truth
//! structure maps, the edge/structure fusion operators, special functions
//! for the evidential loss, memory bookkeeping, soft aggregation, point
//! sampling, DAVIS-style metrics, and the synthetic scene generator.
//!
//! Tensor-framework code (networks, training) and all IO live in the `oasis`
//! crate, which builds on these primitives.

#![no_std]
#![deny(missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod aggregate;
pub mod array;
pub mod augment;
pub mod edges;
mod error;
pub mod memory;
pub mod metrics;
pub mod sampling;
pub mod special;
pub mod synthetic;
pub mod types;

pub use array::Array3;
pub use error::{Error, Result};
pub use types::{
    EdgeMap, FeaturePyramid, FrameTensor, IdMask, ProbMask, StructureKind, StructureMap,
    N_SCALES,
};
