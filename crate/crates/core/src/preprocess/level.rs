//! Active speech level in the style of a Method-B speech voltmeter.
//!
//! The rectified signal is smoothed by two cascaded one-pole sections
//! (30 ms). Activity is counted against thresholds spaced by halving from the
//! overload point down to 2^-16, each with a 200 ms hangover. The active
//! level is read where the margin between a threshold and the level of the
//! samples active against it crosses 15.9 dB, interpolating between
//! neighbouring thresholds.

use crate::error::{Error, Result};

/// Level report in dB relative to the overload point (0 dBov is the power of
/// a full-scale square wave).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelReport {
    pub active_level_dbov: f64,
    /// Speech activity factor in [0, 1].
    pub saf: f64,
    pub long_run_rms_dbov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMeter {
    pub time_constant_s: f64,
    pub hangover_s: f64,
    pub margin_db: f64,
    /// Threshold `j` sits at amplitude `2^-j`.
    pub thresholds: usize,
}

impl Default for LevelMeter {
    fn default() -> Self {
        Self {
            time_constant_s: 0.03,
            hangover_s: 0.2,
            margin_db: 15.9,
            thresholds: 17,
        }
    }
}

pub(crate) fn db_power(p: f64) -> f64 {
    10.0 * p.log10()
}

impl LevelMeter {
    pub fn measure(&self, x: &[f32], sample_rate: u32) -> Result<LevelReport> {
        let n = x.len();
        let sumsq: f64 = x.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if n == 0 || sumsq <= 0.0 {
            return Err(Error::NoSpeech);
        }
        let fs = sample_rate as f64;
        let g = (-1.0 / (fs * self.time_constant_s)).exp();
        let hang = (self.hangover_s * fs).round() as usize;
        // start the smoother settled on the opening stretch so a signal that
        // is active from sample 0 is not under-counted
        let warm = ((self.time_constant_s * fs).round() as usize).clamp(1, n);
        let mut p = x[..warm].iter().map(|v| v.abs() as f64).sum::<f64>() / warm as f64;
        let mut q = p;

        let levels: Vec<f64> = (0..self.thresholds).map(|j| 0.5f64.powi(j as i32)).collect();
        let mut active = vec![0usize; self.thresholds];
        let mut hold = vec![hang; self.thresholds];
        for &v in x {
            p = g * p + (1.0 - g) * (v.abs() as f64);
            q = g * q + (1.0 - g) * p;
            for j in 0..self.thresholds {
                if q >= levels[j] {
                    active[j] += 1;
                    hold[j] = 0;
                } else if hold[j] < hang {
                    active[j] += 1;
                    hold[j] += 1;
                }
            }
        }

        let long_run = db_power(sumsq / n as f64);
        // scan from the overload point downwards; the margin grows as the
        // threshold drops
        let mut prev: Option<(f64, f64)> = None;
        for j in 0..self.thresholds {
            if active[j] == 0 {
                continue;
            }
            let a_db = db_power(sumsq / active[j] as f64);
            let c_db = 20.0 * levels[j].log10();
            let d = a_db - c_db;
            if d >= self.margin_db {
                let level = match prev {
                    Some((pa, pd)) if pd < self.margin_db => {
                        let t = (self.margin_db - pd) / (d - pd);
                        pa + t * (a_db - pa)
                    }
                    _ => a_db,
                };
                let level = level.max(long_run);
                let saf = 10f64.powf((long_run - level) / 10.0).clamp(0.0, 1.0);
                return Ok(LevelReport {
                    active_level_dbov: level,
                    saf,
                    long_run_rms_dbov: long_run,
                });
            }
            prev = Some((a_db, d));
        }
        Err(Error::NoSpeech)
    }
}

/// Active level with the default meter.
pub fn active_level(x: &[f32], sample_rate: u32) -> Result<LevelReport> {
    LevelMeter::default().measure(x, sample_rate)
}
