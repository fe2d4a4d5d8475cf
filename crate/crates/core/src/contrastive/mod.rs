//! Momentum-contrast training: the queue-based contrastive loss, the
//! augmentation pipeline, frame-pair sampling and the training loop for the
//! four regimes.

mod augment;
mod loss;
mod pairs;
mod queue;
mod train;

pub use augment::{augment, sample_crop, AugmentConfig};
pub use loss::{contrastive_loss, LossOutput, LOSS_NORM_TOLERANCE};
pub use pairs::{default_gap, sample_pairs, sample_pairs_from_lengths, FramePair, PairSet};
pub use queue::NegativeQueue;
pub use train::{
    train, write_metrics_csv, Regime, StepRecord, TrainConfig, TrainData, TrainOutcome,
    TrainReport, PATCH_LOSS_WEIGHT,
};
