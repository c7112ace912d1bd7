//! Losses, optimizer, schedules, augmentation, patch sampling and the
//! training loop.

mod adamw;
mod augment;
mod config;
mod loss;
mod sampling;
mod schedule;
mod trainer;

pub use adamw::{adamw_step, OptimizerState};
pub use augment::{augment_patch, rotate_plane, AugmentConfig, Patch};
pub use config::TrainConfig;
pub use loss::{cascade_loss, cross_entropy_masked, weighted_total, CascadeLoss, MaskedLoss, PROB_FLOOR};
pub use sampling::{crop, sample_patch, SampledPatch};
pub use schedule::schedule_value;
pub use trainer::{
    batch_tensor, fold_holdout, member_seed, train, train_ensemble, train_from_scratch, train_with_progress,
    EpochRecord, History,
};
