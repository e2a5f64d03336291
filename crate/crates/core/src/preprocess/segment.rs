use log::warn;

use super::level::{active_level, LevelReport};
use crate::error::{Error, Result};
use crate::model::INPUT_LEN;
use crate::waveform::Waveform;

/// Level that segments are normalized to, dBov.
pub const TARGET_LEVEL_DBOV: f64 = -26.0;
/// Minimum speech activity factor for a segment.
pub const MIN_SAF: f64 = 0.5;
/// Window hop: half a segment.
pub const HOP: usize = INPUT_LEN / 2;

/// A three-second segment ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub samples: Vec<f32>,
    /// Offset of the first sample in the source file.
    pub offset: usize,
    pub saf: f64,
    pub active_level_dbov: f64,
    pub condition: String,
    /// Scaled ([−1, 1]) target values, in the order of the corpus target list.
    pub targets: Vec<f64>,
}

/// Result of a level normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub waveform: Waveform,
    pub gain: f64,
    /// Samples whose magnitude exceeds 1 after scaling (not clipped).
    pub overloaded: usize,
}

const NORMALIZE_TOLERANCE_DB: f64 = 0.01;
const NORMALIZE_PASSES: usize = 6;

/// Scales `x` so its active level is `target_dbov`. The meter's thresholds
/// are absolute, so a single gain step can miss the target on signals with
/// noisy pauses; the gain is refined until a re-measurement agrees.
pub fn normalize_level(x: &Waveform, target_dbov: f64) -> Result<Normalized> {
    let mut gain = 1.0f64;
    let mut samples = x.samples.clone();
    for _ in 0..NORMALIZE_PASSES {
        let level = active_level(&samples, x.sample_rate)?;
        let miss = target_dbov - level.active_level_dbov;
        if miss.abs() <= NORMALIZE_TOLERANCE_DB {
            break;
        }
        gain *= 10f64.powf(miss / 20.0);
        samples = x.samples.iter().map(|&v| (v as f64 * gain) as f32).collect();
    }
    let overloaded = samples.iter().filter(|v| v.abs() > 1.0).count();
    if overloaded > 0 {
        warn!("level normalization pushed {overloaded} samples beyond full scale");
    }
    Ok(Normalized {
        waveform: Waveform::new(samples, x.sample_rate),
        gain,
        overloaded,
    })
}

/// Polarity inversion.
pub fn ipa(x: &[f32]) -> Vec<f32> {
    x.iter().map(|v| -v).collect()
}

fn window_level(x: &[f32], rate: u32) -> Option<LevelReport> {
    active_level(x, rate).ok().filter(|r| r.saf >= MIN_SAF)
}

/// Cuts `x` into level-normalized three-second segments with activity of at
/// least 50%. Windows sit on a 1.5 s grid; scanning left to right, a window
/// is kept when it qualifies, and after a kept window the next disjoint
/// window is preferred over the half-overlapping one. Inputs shorter than
/// three seconds are zero-padded at the tail to one window.
pub fn extract_segments(x: &Waveform) -> Result<Vec<SegmentRecord>> {
    x.require_wideband()?;
    if x.is_empty() {
        return Err(Error::EmptyResult("empty input".into()));
    }
    let rate = x.sample_rate;
    let mut windows: Vec<(usize, Vec<f32>)> = Vec::new();
    if x.len() < INPUT_LEN {
        let mut padded = x.samples.clone();
        padded.resize(INPUT_LEN, 0.0);
        windows.push((0, padded));
    } else {
        let count = (x.len() - INPUT_LEN) / HOP + 1;
        windows.extend((0..count).map(|g| (g * HOP, x.samples[g * HOP..g * HOP + INPUT_LEN].to_vec())));
    }
    let qualifies: Vec<bool> = windows.iter().map(|(_, w)| window_level(w, rate).is_some()).collect();

    let mut keep = Vec::new();
    let mut g = 0;
    while g < windows.len() {
        if qualifies[g] {
            keep.push(g);
            g += if g + 2 < windows.len() && qualifies[g + 2] { 2 } else { 1 };
        } else {
            g += 1;
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptyResult("no window reaches 50% speech activity".into()));
    }

    keep.into_iter()
        .map(|g| {
            let (offset, samples) = &windows[g];
            let norm = normalize_level(&Waveform::new(samples.clone(), rate), TARGET_LEVEL_DBOV)?;
            let level = active_level(&norm.waveform.samples, rate)?;
            Ok(SegmentRecord {
                samples: norm.waveform.samples,
                offset: *offset,
                saf: level.saf,
                active_level_dbov: level.active_level_dbov,
                condition: String::new(),
                targets: Vec::new(),
            })
        })
        .collect()
}
