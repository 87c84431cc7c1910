//! Embedding network, action posterior, losses and the training loop.

pub mod linalg;
pub mod net;

pub use net::{EmbeddingNet, Mode, NetShape};
pub mod posterior;

pub use posterior::{fit_posterior, PosteriorConfig, PosteriorModel};
pub mod loss;

pub use loss::{collision_entropy, loss_bias, loss_reward, loss_total, loss_var, LossBatch, LossBreakdown, LossWeights};
pub mod train;

pub use train::{cael_mips_estimate, train_embeddings, TrainConfig, TrainedModels};
