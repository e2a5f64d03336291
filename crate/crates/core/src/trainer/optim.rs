use super::graph::Gradient;
use crate::error::Result;
use crate::model::WaweNet;
use crate::scalar::Scalar;

pub const LEARNING_RATE: f64 = 1e-4;
pub const L2_WEIGHT: f64 = 1e-5;
/// Smallest drop in validation loss that counts as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-4;
/// Epochs without progress before the learning rate is cut.
pub const PATIENCE: usize = 5;
pub const LR_DECAY: f64 = 0.1;
// absorbs representation error so that a drop of exactly MIN_IMPROVEMENT in
// decimal still counts
const IMPROVEMENT_SLACK: f64 = 1e-12;

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(net: &WaweNet<T>) -> Self {
        let zeros = Gradient::zeros(net).tensors;
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update<T: Scalar>(&mut self, net: &mut WaweNet<T>, grad: &Gradient, lr: f64) -> Result<()> {
        grad.check_matches(net)?;
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for (((_, w), g), (m, v)) in net
            .param_tensors_mut()
            .into_iter()
            .zip(&grad.tensors)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (i, w) in w.iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *w = T::of(w.f64() - step);
            }
        }
        Ok(())
    }
}

/// One epoch's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// RMSE over the epoch's training batches (scaled units).
    pub train_rmse: f64,
    /// Validation RMSE, the quantity driving the schedule.
    pub val_rmse: f64,
    /// Per-target validation Pearson correlation (NaN when undefined).
    pub val_rho: Vec<f64>,
    pub lr_decayed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub lr: f64,
    pub adam: Adam,
    pub since_improvement: usize,
    pub best: f64,
    pub log: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new<T: Scalar>(net: &WaweNet<T>, lr: f64) -> Self {
        Self {
            epoch: 0,
            lr,
            adam: Adam::new(net),
            since_improvement: 0,
            best: f64::INFINITY,
            log: Vec::new(),
        }
    }

    /// Feeds one epoch's validation loss to the schedule. Progress is measured
    /// against the best loss so far and a drop of exactly [`MIN_IMPROVEMENT`]
    /// counts. Returns whether the learning rate was cut.
    pub fn schedule_update(&mut self, val_loss: f64) -> bool {
        if self.best - val_loss >= MIN_IMPROVEMENT - IMPROVEMENT_SLACK {
            self.best = val_loss;
            self.since_improvement = 0;
            return false;
        }
        self.since_improvement += 1;
        if self.since_improvement >= PATIENCE {
            self.lr *= LR_DECAY;
            self.since_improvement = 0;
            return true;
        }
        false
    }
}
