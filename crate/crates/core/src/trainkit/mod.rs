//! Training loop, learning-rate schedule, checkpoints and evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod model;
mod schedule;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Task, TrainConfig};
pub use evaluate::{evaluate, EvalReport};
pub use model::{Model, Objective, PairEmbedding, PairVars};
pub use schedule::lr_at_step;
pub use trainer::{train, validation_loss, write_loss_log, LogRow, TrainOutcome, Trainer};

pub(crate) use trainer::csv_error;
