//! Synthetic speech-like test material: alternating harmonic ("voiced") and
//! noise ("fricative") bursts separated by pauses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::SAMPLE_RATE;
use crate::preprocess::{normalize_level, TARGET_LEVEL_DBOV};
use crate::waveform::Waveform;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechLike {
    pub duration_s: f64,
    pub burst_s: (f64, f64),
    pub pause_s: (f64, f64),
    /// Probability that a burst is harmonic rather than noise.
    pub voiced_fraction: f64,
    pub level_dbov: f64,
}

impl Default for SpeechLike {
    fn default() -> Self {
        Self {
            duration_s: 3.0,
            burst_s: (0.15, 0.6),
            pause_s: (0.04, 0.3),
            voiced_fraction: 0.7,
            level_dbov: TARGET_LEVEL_DBOV,
        }
    }
}

fn edge_gain(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let d = i.min(len - 1 - i);
    if d >= ramp {
        1.0
    } else {
        0.5 - 0.5 * (PI * d as f64 / ramp as f64).cos()
    }
}

impl SpeechLike {
    pub fn with_duration(duration_s: f64) -> Self {
        Self {
            duration_s,
            ..Self::default()
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Waveform> {
        let fs = SAMPLE_RATE as f64;
        let n = (self.duration_s * fs).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0f64; n];
        let mut pos = (rng.gen_range(0.0..0.15) * fs) as usize;
        let ramp = (0.015 * fs) as usize;
        while pos < n {
            let len = ((rng.gen_range(self.burst_s.0..self.burst_s.1) * fs) as usize).min(n - pos);
            let gain = 10f64.powf(rng.gen_range(-8.0..0.0) / 20.0);
            if rng.gen_bool(self.voiced_fraction) {
                let f0_start: f64 = rng.gen_range(90.0..250.0);
                let f0_end = f0_start * rng.gen_range(0.85..1.15);
                let f1 = rng.gen_range(300.0..900.0);
                let f2 = rng.gen_range(900.0..2500.0);
                let harmonics = (6000.0 / f0_start.max(f0_end)) as usize;
                let phases: Vec<f64> = (0..harmonics).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
                let weights: Vec<f64> = (1..=harmonics)
                    .map(|h| {
                        let f = h as f64 * f0_start;
                        (1.0 + 2.0 * (-((f - f1) / 150.0).powi(2)).exp() + 1.5 * (-((f - f2) / 200.0).powi(2)).exp())
                            / h as f64
                    })
                    .collect();
                let mut phase = 0.0;
                for i in 0..len {
                    let f0 = f0_start + (f0_end - f0_start) * i as f64 / len as f64;
                    phase += 2.0 * PI * f0 / fs;
                    let s: f64 = weights
                        .iter()
                        .zip(&phases)
                        .enumerate()
                        .map(|(h, (w, p))| w * ((h + 1) as f64 * phase + p).sin())
                        .sum();
                    out[pos + i] = gain * s * edge_gain(i, len, ramp);
                }
            } else {
                let tilt = rng.gen_range(-0.9..0.9);
                let mut prev = 0.0;
                for i in 0..len {
                    let w: f64 = rng.sample(StandardNormal);
                    let v = w - tilt * prev;
                    prev = w;
                    out[pos + i] = 0.5 * gain * v * edge_gain(i, len, ramp);
                }
            }
            pos += len + (rng.gen_range(self.pause_s.0..self.pause_s.1) * fs) as usize;
        }
        let raw = Waveform::wideband(out.into_iter().map(|v| v as f32).collect());
        Ok(normalize_level(&raw, self.level_dbov)?.waveform)
    }
}

/// `amplitude · sin(2π f k / fs)` for `n` samples at the network rate.
pub fn tone(freq_hz: f64, amplitude: f64, n: usize) -> Vec<f32> {
    let fs = SAMPLE_RATE as f64;
    (0..n)
        .map(|k| (amplitude * (2.0 * PI * freq_hz * k as f64 / fs).sin()) as f32)
        .collect()
}
