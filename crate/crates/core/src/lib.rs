//! Spectral-temporal features, phenology-aware augmentation, and the CropNet
//! classifier for cross-region crop type mapping from Sentinel-2 style
//! reflectance time series.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: samples, label schemas, JSON-lines ingestion, class alignment
//! - [`features`]: median composites (1D/2D), harmonic coefficients, indices
//! - [`augment`]: time shift, time scale and magnitude warping
//! - [`nn`]: dense kernels with analytic gradients (conv, BN, dropout, Adam)
//! - [`cropnet`]: the classifier, training loop, Grad-CAM and checkpoints
//! - [`eval`]: confusion matrices, OA/mF1 and the seeded transfer protocol
//! - [`synth`]: a double-logistic phenology generator for desk-scale runs

pub mod augment;
pub mod blob;
pub mod cropnet;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
