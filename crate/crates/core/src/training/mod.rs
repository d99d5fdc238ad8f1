//! Contrastive training against time-stretched replicas.

mod batch;
mod loss;
mod trainer;

pub use batch::{build_batch, build_pairs, sample_factor, MiniBatch, TrainingSet};
pub use loss::{ntxent_loss, ntxent_value, positive_pairs, NORM_TOLERANCE};
pub use trainer::{
    epoch_plan, train, train_step, LogRecord, TrainConfig, TrainOptions, TrainOutcome, TrainState,
};
