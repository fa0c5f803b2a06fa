//! Hyperbolic (Lorentz-model) classification heads for detection-style classifiers.
//!
//! - [`lorentz`]: hyperboloid geometry (inner product, exp/log maps, distance, projections).
//! - [`head`]: distance-based hyperbolic logits, Euclidean baselines, sigmoid focal loss.
//! - [`optim`]: Riemannian SGD for prototypes and AdamW for Euclidean parameters.
//! - [`data`]: synthetic hierarchical datasets with background samples.
//! - [`hubness`]: pairwise distance histograms and k-occurrence skewness.
//! - [`train`]: encoder, training loop, evaluation, zero-shot runs and checkpoints.

pub mod error;
pub mod data;
pub mod head;
pub mod hubness;
pub mod lorentz;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
