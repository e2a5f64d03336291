//! Loss, gradients, optimizer, learning-rate schedule, the epoch loop and
//! evaluation metrics.

mod fit;
mod graph;
mod metrics;
mod optim;

pub use fit::{epoch_batches, fit, predict, Dataset, FitConfig};
pub use graph::{l2_penalty, loss_and_grad, Gradient, LossGrad, TrainGraph};
pub use metrics::{metrics, normalized_rmse, pearson, rmse, Agreement, MetricReport, TargetMetrics};
pub use optim::{Adam, EpochRecord, TrainState, L2_WEIGHT, LEARNING_RATE, LR_DECAY, MIN_IMPROVEMENT, PATIENCE};
