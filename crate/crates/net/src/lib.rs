//! Complex-input imaging transformer for MRI denoising: model, losses,
//! Sophia optimizer, training loop and chunked inference.

pub mod augment;
pub mod check;
pub mod checkpoint;
pub mod config;
pub mod features;
pub mod infer;
pub mod layout;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use config::ModelConfig;
pub use model::{forward, forward_stack, Bound, Mode};
pub use params::{ParameterSet, Role, Weights};
