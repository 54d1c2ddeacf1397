//! Losses, metrics, optimizer, schedule and the training loops.

pub mod loss;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use loss::{bce_loss, combined_loss, dice_loss};
pub use metrics::{dice_iou, mdice, miou, threshold_logits};
pub use optim::{AdamW, Schedule};
pub use trainer::{evaluate, log_row, make_batch, train_epoch, train_step, EpochStats, EvalStats, LOG_HEADER};
