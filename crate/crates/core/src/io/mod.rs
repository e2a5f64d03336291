//! File formats: PCM audio, weight files, corpus manifests, epoch logs and
//! plot matrices.

mod manifest;
mod plot;
mod wav;
mod weights;

pub use manifest::{Manifest, ManifestRecord, Split, SplitFractions};
pub use plot::PlotData;
pub use wav::{wav_read, wav_write};
pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHT_MAGIC, WEIGHT_VERSION};

/// Full round-trip text form of a real number.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

use crate::trainer::EpochRecord;

/// Header of the per-epoch training log.
pub fn epoch_log_header(targets: &[&str]) -> String {
    let mut cols = vec!["epoch".to_string(), "lr".into(), "train_rmse".into(), "val_rmse".into()];
    cols.extend(targets.iter().map(|t| format!("rho_{t}")));
    cols.push("lr_decayed".into());
    cols.join(",")
}

/// One log line; reals use [`fmt_real`] so reruns can be compared bytewise.
pub fn epoch_log_line(r: &EpochRecord) -> String {
    let mut cols = vec![r.epoch.to_string(), fmt_real(r.lr), fmt_real(r.train_rmse), fmt_real(r.val_rmse)];
    cols.extend(r.val_rho.iter().map(|&v| fmt_real(v)));
    cols.push(r.lr_decayed.to_string());
    cols.join(",")
}
