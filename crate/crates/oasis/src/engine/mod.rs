//! Orchestration: inference propagation, training and data preparation.

pub mod data;
pub mod propagate;
pub mod train;

pub use data::{Clip, Video};
pub use propagate::{propagate_video, FrameOutput, Propagation, Propagator};
pub use train::{pretrain, train, StepLog, TrainOptions, TrainReport};
