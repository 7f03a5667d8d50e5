//! Encoder/decoder architectures, losses, and checkpoints.

pub mod checkpoint;
pub mod latent;
pub mod loss;
pub mod network;
pub mod spec;

pub use checkpoint::Checkpoint;
pub use latent::{condition_tensor, reparameterize, standard_normal, ConditionLabel, LatentDistribution, LatentNoise};
pub use loss::{kld_gaussian, mse, LossBreakdown};
pub use network::Model;
pub use spec::{ModelMode, ModelSpec};
