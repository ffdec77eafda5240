//! Training loops: prototype embedding on weak labels, and pairwise
//! cross-entropy for the two-tower heads, both with Adam.

mod adam;
mod config;
mod log;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use config::{AdamConfig, Schedule, TrainConfig, MAX_EPOCHS};
pub use log::{EpochRecord, StepRecord, TrainLog, EPOCH_LOG_FILE, STEP_LOG_FILE};
pub use model::{Head, Model, PreparedClips, INFERENCE_CHUNK};
pub use train::{
    check_pairs, epoch_checkpoint_name, prototype_cosine, train, train_embedding, train_two_tower, two_tower_loss,
    TrainOutcome, FINAL_CHECKPOINT,
};
