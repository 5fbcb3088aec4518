//! The CropNet classifier: four two-convolution blocks, global average
//! pooling and a linear head, in a 2D (band x time) and a 1D variant.

pub mod cam;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod train;

pub use cam::ImportanceMap;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{CropNetConfig, Variant};
pub use model::{BlockSpec, CropNet, Forward, ForwardCache, Gradients};
pub use train::{
    predict_batched, train, AugmentedSet, EpochStats, FeatureSet, SeriesItem, TrainHyper,
    TrainingSet,
};
