//! Waveform tensors, the synthetic surrogate generator, and dataset plumbing.

pub mod generator;
pub mod io;
pub mod pulses;
pub mod split;
pub mod standardize;
pub mod waveform;

pub use generator::{generate, generate_reference, GeneratorConfig};
pub use pulses::{extract_macropulses, PulseLayout, PulseMode};
pub use split::{split, SplitFractions, Splits};
pub use standardize::{standardize, ChannelStats};
pub use waveform::{FaultClass, Label, WaveformTensor, CHANNEL_NAMES};
