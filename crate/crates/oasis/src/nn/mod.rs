//! Network definition on top of candle.

pub mod decoders;
pub mod encoders;
pub mod layers;
pub mod model;
pub mod ops;

pub use encoders::{Features, ObjectMemory};
pub use layers::ParamStore;
pub use model::{OasisModel, Segmentation};
