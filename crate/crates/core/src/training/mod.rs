//! Optimization, evaluation, checkpoints and the model gradient check.

mod adam;
mod checkpoint;
mod evaluate;
mod gradcheck;
mod objective;
mod schedule;
mod trainer;

pub use adam::{adam_step, clip_global_norm, OptimizerState};
pub use checkpoint::{Checkpoint, ManifestEntry};
pub use evaluate::{accuracy, evaluate, predict_all, Evaluation, Prediction};
pub use gradcheck::{grad_check_model, GradCheckConfig, GradCheckReport};
pub use objective::{batch_loss, batch_loss_and_grads, DecayMode, Objective};
pub use schedule::{lr_at, ScheduleConfig, WARMUP_FRACTION};
pub use trainer::{train, BestSnapshot, StepLog, TrainConfig, TrainOutcome, TrainRecord};
