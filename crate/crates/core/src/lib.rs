//! Temporal masks and Grad-CAM saliency for small video classifiers.
//!
//! The crate bundles a reverse-mode autodiff engine, two desk-scale video
//! models (a 3D CNN and a convolutional LSTM), a synthetic motion dataset,
//! freeze/reverse perturbations with a learned temporal mask, per-frame
//! Grad-CAM, an exhaustive temporal-crop baseline, and the metric suite used
//! to compare how the two models attend to space and time.

pub mod autodiff;
pub mod crop;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod perturb;
pub mod pipeline;
pub mod tensor;

pub use autodiff::{GradientStore, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
