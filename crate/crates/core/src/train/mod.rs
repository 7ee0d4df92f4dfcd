//! Optimizer, learning-rate schedule, checkpoints and the training,
//! evaluation, inference and ablation drivers.

mod ablate;
mod checkpoint;
mod config;
mod infer;
mod optim;
mod trainer;

pub use ablate::{ablate, check_comparable, mean_sd, AblationReport, RunResult};
pub use checkpoint::{Checkpoint, RngState, MAGIC, VERSION};
pub use config::{AugmentMode, TrainConfig};
pub use infer::{class_color, evaluate_checkpoint, infer_file, overlay, InferOutputs, OVERLAY_ALPHA, PALETTE};
pub use optim::{lr_at, momentum_step, zero_velocities};
pub use trainer::{
    evaluate_samples, sample_gradients, EpochLog, SampleGrad, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};
