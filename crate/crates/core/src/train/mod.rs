//! Optimisation: warmup + cosine schedule, AdamW, early stopping, weight
//! averaging and the epoch loop that ties them to the model and CTC loss.

mod early_stop;
mod optim;
mod schedule;
mod swa;
mod trainer;

pub use early_stop::{EarlyStopping, StopDecision};
pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, OptimizerState};
pub use schedule::{lr_at, ScheduleConfig};
pub use swa::swa_update;
pub use trainer::{
    batch_loss_and_grads, bucket_batches, curves_csv, decode_sample, evaluate, read_curves, train_loop, CurveRow,
    Persist, Sample, TrainConfig, TrainOutcome, TrainPlan, TrainState,
};
