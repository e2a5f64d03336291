use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::graph::loss_and_grad;
use super::metrics::pearson;
use super::optim::{EpochRecord, TrainState, L2_WEIGHT, LEARNING_RATE};
use crate::dsp::{ChannelSignal, NormMode};
use crate::error::{Error, Result};
use crate::model::WaweNet;
use crate::preprocess::SegmentRecord;
use crate::scalar::Scalar;

/// Network inputs with their scaled targets and condition labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Vec<ChannelSignal<T>>,
    pub targets: Vec<Vec<f64>>,
    pub conditions: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    /// Single-channel inputs; `columns` picks entries of each record's target
    /// vector.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a SegmentRecord>, columns: &[usize]) -> Result<Self> {
        let mut ds = Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            conditions: Vec::new(),
        };
        for r in records {
            let t = columns
                .iter()
                .map(|&c| {
                    r.targets
                        .get(c)
                        .copied()
                        .ok_or_else(|| Error::InvalidShape(format!("record has no target column {c}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            ds.inputs
                .push(ChannelSignal::mono(r.samples.iter().map(|&v| T::of(v as f64)).collect())?);
            ds.targets.push(t);
            ds.conditions.push(r.condition.clone());
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Adds the polarity-inverted copy of every training item.
    pub ipa: bool,
    pub lr: f64,
    pub l2: f64,
    /// Worker threads; 1 is the reference single-threaded mode, 0 uses the
    /// ambient pool.
    pub threads: usize,
    /// Stop after the first epoch whose validation correlation reaches this
    /// value for every target.
    pub stop_at_rho: Option<f64>,
    /// Wall-clock budget; no new epoch starts once it is spent.
    pub time_budget: Option<Duration>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch: 60,
            seed: 0,
            ipa: true,
            lr: LEARNING_RATE,
            l2: L2_WEIGHT,
            threads: 1,
            stop_at_rho: None,
            time_budget: None,
        }
    }
}

/// Batch index lists for one epoch. A trailing single-item batch is folded
/// into its predecessor because batch statistics need two items.
pub fn epoch_batches(order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(batch).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").extend(last);
    }
    out
}

/// Eval-mode estimates for every item.
pub fn predict<T: Scalar>(net: &WaweNet<T>, inputs: &[ChannelSignal<T>]) -> Result<Vec<Vec<f64>>> {
    inputs
        .par_iter()
        .map(|x| net.forward(x).map(|r| r.estimates.iter().map(|v| v.f64()).collect()))
        .collect()
}

fn validate<T: Scalar>(net: &WaweNet<T>, val: &Dataset<T>) -> Result<(f64, Vec<f64>)> {
    let est = predict(net, &val.inputs)?;
    let outputs = net.head.outputs;
    let sq: f64 = est
        .iter()
        .zip(&val.targets)
        .flat_map(|(e, t)| e.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum();
    let rmse = (sq / (est.len() * outputs) as f64).sqrt();
    let rho = (0..outputs)
        .map(|o| {
            let e: Vec<f64> = est.iter().map(|r| r[o]).collect();
            let t: Vec<f64> = val.targets.iter().map(|r| r[o]).collect();
            pearson(&e, &t).unwrap_or(f64::NAN)
        })
        .collect();
    Ok((rmse, rho))
}

fn fit_inner<T: Scalar>(
    net: &mut WaweNet<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &FitConfig,
    observer: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<TrainState> {
    let mut state = TrainState::new(net, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train.len();
    let items = if cfg.ipa { 2 * n } else { n };
    let mut order: Vec<usize> = (0..items).collect();
    let start = Instant::now();
    net.set_mode(NormMode::Train);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = state.lr;
        let mut sq = 0.0;
        for batch in epoch_batches(&order, cfg.batch) {
            let inputs: Vec<ChannelSignal<T>> = batch
                .iter()
                .map(|&i| {
                    let x = &train.inputs[i % n];
                    if i < n {
                        x.clone()
                    } else {
                        x.map_channels(x.len(), |src, dst| {
                            dst.iter_mut().zip(src).for_each(|(d, &s)| *d = -s);
                        })
                    }
                })
                .collect();
            let targets: Vec<Vec<f64>> = batch.iter().map(|&i| train.targets[i % n].clone()).collect();
            let lg = loss_and_grad(net, &inputs, &targets, cfg.l2)?;
            sq += lg.mse * batch.len() as f64;
            state.adam.update(net, &lg.gradient, lr)?;
        }
        let (val_rmse, val_rho) = validate(net, val)?;
        let decayed = state.schedule_update(val_rmse);
        state.epoch = epoch;
        let record = EpochRecord {
            epoch,
            lr,
            train_rmse: (sq / items as f64).sqrt(),
            val_rmse,
            val_rho,
            lr_decayed: decayed,
        };
        observer(&record);
        let stop = cfg
            .stop_at_rho
            .is_some_and(|thr| record.val_rho.iter().all(|&r| r >= thr));
        state.log.push(record);
        if stop || cfg.time_budget.is_some_and(|b| start.elapsed() >= b) {
            break;
        }
    }
    net.set_mode(NormMode::Eval);
    Ok(state)
}

/// Trains `net` in place and returns the optimizer state with the epoch log.
/// The net after the last epoch run is kept; there is no checkpoint
/// selection.
pub fn fit<T: Scalar>(
    net: &mut WaweNet<T>,
    train: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &FitConfig,
    observer: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<TrainState> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("training and validation splits must be nonempty".into()));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("epochs and batch size must be positive".into()));
    }
    if !(cfg.lr > 0.0) || cfg.l2 < 0.0 {
        return Err(Error::InvalidConfig(format!("bad learning rate {} or penalty {}", cfg.lr, cfg.l2)));
    }
    let outputs = net.head.outputs;
    if train.targets.iter().chain(&val.targets).any(|t| t.len() != outputs) {
        return Err(Error::InvalidShape(format!("targets must have {outputs} entries")));
    }
    if cfg.threads == 0 {
        return fit_inner(net, train, val, cfg, observer);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| fit_inner(net, train, val, cfg, observer))
}
