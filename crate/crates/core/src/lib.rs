//! Data model and signal-processing core for complex-valued MRI denoising:
//! image stacks and PowerNorm, k-space filtering, g-factor noise synthesis,
//! image-quality metrics, statistics and the wavelet baseline.

pub mod baseline;
pub mod error;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod stack;
pub mod stats;

pub use error::{ImtError, Result};
pub use kspace::{KspaceFilterSpec, PhaseAxis};
pub use noise::{GmapModel, NoiseSpec};
pub use stack::{ComplexImageStack, GFactorMap, PowerNormState};

pub use num_complex::Complex32;
