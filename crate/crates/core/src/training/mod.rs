//! Losses and the hypernetwork training loop.

mod config;
mod losses;
mod trainer;

pub use config::{PromptPair, TrainingConfig};
pub use losses::{
    directional_loss, directional_loss_from_embeddings, id_loss, id_loss_from_images, region_loss,
    total_loss, LossBreakdown, LossWeights, DEGENERATE_NORM,
};
pub use trainer::{
    sample_loss, train, LossHistory, LossRecord, StepOutcome, StepSample, TrainOutcome, Trainer,
};
