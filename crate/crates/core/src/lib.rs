//! Anomaly detection for pulsed-power modulator waveforms with (conditional)
//! variational autoencoders.

pub mod adam;
pub mod autodiff;
pub(crate) mod binio;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod kernels;
pub mod landscape;
pub mod model;
pub mod params;
pub mod seeds;
pub mod tensor;
pub mod training;
pub mod uq;

pub use error::{Error, Result};
pub use tensor::Tensor;
