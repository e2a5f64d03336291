//! The network read as a chain of elementary signal-processing operations:
//! DC tracing through every stage, three-tap filter classification, the
//! two-tone rectification/pooling demonstration and per-condition latent
//! fingerprints.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use log::warn;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dsp::{self, ChannelSignal, FilterKernel, NormMode, TAPS};
use crate::error::{Error, Result};
use crate::model::WaweNet;
use crate::scalar::{mean64, Scalar};

/// Stages recorded per section, in execution order.
pub const STAGES: [&str; 6] = ["fir", "gain", "bias", "hwr", "pool-fir", "subsample"];

/// Per-channel DC (mean) after the input and after every stage of every
/// section.
#[derive(Debug, Clone, PartialEq)]
pub struct DcFlowMap {
    /// `input`, then `S<i> <stage>` for each section and stage.
    pub labels: Vec<String>,
    /// One row per label, one column per channel. The input row holds the
    /// input channel means in its leading columns and zeros elsewhere.
    pub values: Vec<Vec<f64>>,
    /// Latent vector produced by the decomposed execution.
    pub latent: Vec<f64>,
}

impl DcFlowMap {
    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Row for `stage` of 1-based section `section`.
    pub fn stage_row(&self, section: usize, stage: usize) -> &[f64] {
        &self.values[1 + (section - 1) * STAGES.len() + stage]
    }
}

fn means<T: Scalar>(rows: &[Vec<T>]) -> Vec<f64> {
    rows.iter().map(|r| mean64(r)).collect()
}

/// Runs `x` through the net one elementary operation at a time, recording
/// each stage's channel means. Convolution offsets are applied in the bias
/// stage so the FIR stage is purely linear.
pub fn dc_flow<T: Scalar>(net: &WaweNet<T>, x: &ChannelSignal<T>) -> Result<DcFlowMap> {
    if net.mode() == NormMode::Train {
        return Err(Error::StateError("the DC trace needs an eval-mode network".into()));
    }
    net.check_input(x)?;
    let c = net.config().channels;
    let mut labels = vec!["input".to_string()];
    let mut input_row = x.channel_means();
    input_row.resize(c.max(input_row.len()), 0.0);
    let mut values = vec![input_row];

    let mut cur = x.clone();
    for s in &net.sections {
        let spec = &s.spec;
        let len = spec.conv_len();
        let padded = dsp::pad_for_conv(&cur.pad_tail(spec.pad_after));
        let mut z = vec![T::zero(); c * len];
        dsp::conv_padded(&s.conv, &padded, len, false, &mut z);
        let fir: Vec<Vec<T>> = z.chunks_exact(len).map(<[T]>::to_vec).collect();
        let gain: Vec<Vec<T>> = fir
            .iter()
            .enumerate()
            .map(|(ch, r)| dsp::apply_gain_bias(r, T::of(s.norm.gain(ch)), T::zero()))
            .collect();
        let bias: Vec<Vec<T>> = gain
            .iter()
            .enumerate()
            .map(|(ch, r)| {
                let b = s.norm.bias(ch) + s.norm.gain(ch) * s.conv.offsets[ch].f64();
                dsp::apply_gain_bias(r, T::one(), T::of(b))
            })
            .collect();
        let rect: Vec<Vec<T>> = bias.iter().map(|r| dsp::hwr(r)).collect();
        let pooled = rect
            .iter()
            .map(|r| dsp::pool_filter(r, spec.pool))
            .collect::<Result<Vec<_>>>()?;
        // avg_pool block means are the moving-average outputs at each
        // block's last sample
        let sub = pooled
            .iter()
            .map(|r| dsp::subsample(r, spec.pool, spec.pool - 1))
            .collect::<Result<Vec<_>>>()?;
        for (name, rows) in STAGES.iter().zip([&fir, &gain, &bias, &rect, &pooled, &sub]) {
            labels.push(format!("S{} {name}", spec.index));
            values.push(means(rows));
        }
        cur = ChannelSignal::from_channels(&sub)?;
    }
    Ok(DcFlowMap {
        labels,
        values,
        latent: cur.as_slice().iter().map(|v| v.f64()).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FilterType {
    Lowpass,
    Highpass,
    Bandpass,
    Bandstop,
}

impl FilterType {
    pub const ALL: [FilterType; 4] = [
        FilterType::Lowpass,
        FilterType::Highpass,
        FilterType::Bandpass,
        FilterType::Bandstop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterType::Lowpass => "lowpass",
            FilterType::Highpass => "highpass",
            FilterType::Bandpass => "bandpass",
            FilterType::Bandstop => "bandstop",
        }
    }
}

impl fmt::Display for FilterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Frequency points on `[0, π]` used for classification.
pub const RESPONSE_POINTS: usize = 512;
/// Edge-to-peak ratio below which a band edge counts as attenuated.
pub const EDGE_RATIO: f64 = 0.9;
// relative tolerance when deciding whether an edge is the peak
const PEAK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterClass {
    pub class: FilterType,
    /// |H(ω)| at `RESPONSE_POINTS` evenly spaced points from 0 to π.
    pub response: Vec<f64>,
}

/// Magnitude response of a three-tap kernel.
pub fn magnitude_response<T: Scalar>(taps: &[T; TAPS], points: usize) -> Vec<f64> {
    let h: Vec<f64> = taps.iter().map(|t| t.f64()).collect();
    (0..points)
        .map(|k| {
            let w = if points > 1 { PI * k as f64 / (points - 1) as f64 } else { 0.0 };
            // output k uses x[k−1], x[k], x[k+1]; only |H| matters
            let re = h[0] * w.cos() + h[1] + h[2] * w.cos();
            let im = h[0] * w.sin() - h[2] * w.sin();
            re.hypot(im)
        })
        .collect()
}

/// Lowpass when the response peaks at DC with an attenuated Nyquist edge,
/// highpass for the mirror case, bandpass when the peak is interior with both
/// edges attenuated, bandstop otherwise. The offset is ignored.
pub fn classify_filter<T: Scalar>(k: &FilterKernel<T>) -> Result<FilterClass> {
    if k.taps.iter().all(|t| t.f64() == 0.0) {
        return Err(Error::DegenerateInput("all-zero kernel has no response".into()));
    }
    let response = magnitude_response(&k.taps, RESPONSE_POINTS);
    let g0 = response[0];
    let gpi = response[RESPONSE_POINTS - 1];
    let gmax = response.iter().copied().fold(0.0, f64::max);
    let interior = response[1..RESPONSE_POINTS - 1].iter().copied().fold(0.0, f64::max);
    let is_peak = |g: f64| g >= gmax * (1.0 - PEAK_TOL);
    let class = if is_peak(g0) && gpi < EDGE_RATIO * g0 {
        FilterType::Lowpass
    } else if is_peak(gpi) && g0 < EDGE_RATIO * gpi {
        FilterType::Highpass
    } else if is_peak(interior) && g0 < EDGE_RATIO * gmax && gpi < EDGE_RATIO * gmax {
        FilterType::Bandpass
    } else {
        FilterType::Bandstop
    };
    Ok(FilterClass { class, response })
}

/// Kernel counts per class over a set of convolution layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCensus {
    pub counts: BTreeMap<FilterType, usize>,
    pub total: usize,
    /// All-zero kernels, left out of `total`.
    pub skipped: usize,
}

impl FilterCensus {
    pub fn fraction(&self, t: FilterType) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(&t).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn fractions(&self) -> Vec<(FilterType, f64)> {
        FilterType::ALL.iter().map(|&t| (t, self.fraction(t))).collect()
    }
}

/// Classifies every kernel of every section.
pub fn filter_census<T: Scalar>(net: &WaweNet<T>) -> FilterCensus {
    let mut counts: BTreeMap<FilterType, usize> = FilterType::ALL.iter().map(|&t| (t, 0)).collect();
    let (mut total, mut skipped) = (0, 0);
    for s in &net.sections {
        for o in 0..s.conv.out_channels {
            for i in 0..s.conv.in_channels {
                match classify_filter(&s.conv.kernel(o, i)) {
                    Ok(fc) => {
                        *counts.entry(fc.class).or_default() += 1;
                        total += 1;
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
    }
    FilterCensus { counts, total, skipped }
}

/// Single-sided amplitude spectrum: a unit-amplitude sinusoid on a bin reads
/// 1, a constant `c` reads `|c|` at DC.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub rate_hz: f64,
    pub bin_hz: f64,
    pub magnitude: Vec<f64>,
}

impl Spectrum {
    pub fn of(x: &[f64], rate_hz: f64) -> Self {
        let n = x.len();
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let magnitude = buf[..n / 2 + 1]
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let edge = k == 0 || (n % 2 == 0 && k == n / 2);
                c.norm() / n as f64 * if edge { 1.0 } else { 2.0 }
            })
            .collect();
        Self {
            rate_hz,
            bin_hz: rate_hz / n as f64,
            magnitude,
        }
    }

    pub fn bin(&self, freq_hz: f64) -> usize {
        ((freq_hz / self.bin_hz).round() as usize).min(self.magnitude.len() - 1)
    }

    pub fn at(&self, freq_hz: f64) -> f64 {
        self.magnitude[self.bin(freq_hz)]
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.magnitude.len()).map(|k| k as f64 * self.bin_hz).collect()
    }
}

/// Amplitude ratio in dB with a floor to keep empty bins finite.
pub fn amplitude_db(a: f64) -> f64 {
    20.0 * a.max(1e-300).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoToneConfig {
    pub f1_hz: f64,
    pub f2_hz: f64,
    pub pool: usize,
    pub rate_hz: f64,
    /// Samples per tone; a whole number of periods of both tones keeps every
    /// component on a bin.
    pub len: usize,
}

impl Default for TwoToneConfig {
    fn default() -> Self {
        Self {
            f1_hz: 345.0,
            f2_hz: 6789.0,
            pool: 2,
            rate_hz: 16_000.0,
            len: 16_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoToneDemo {
    pub config: TwoToneConfig,
    /// Spectrum of `x1 + x2`.
    pub input: Spectrum,
    /// Spectrum of `hwr(x1 + x2)`.
    pub rectified: Spectrum,
    /// Spectrum of `hwr(x1) + hwr(x2)`, which has no intermodulation.
    pub separate: Spectrum,
    /// Spectrum of the rectified sum after average pooling.
    pub pooled: Spectrum,
    /// Level of the `f2 − f1` component in `rectified` minus that in
    /// `separate`, dB.
    pub intermod_gain_db: f64,
    /// Frequency just above the pooled Nyquist used for the aliasing probe.
    pub alias_probe_hz: f64,
    /// Where the probe lands after pooling.
    pub alias_image_hz: f64,
    /// Loss of the probe tone through pooling, dB (positive = attenuated).
    pub alias_attenuation_db: f64,
}

fn sine(freq_hz: f64, rate_hz: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| (2.0 * PI * freq_hz * k as f64 / rate_hz).sin()).collect()
}

/// Rectification creates DC, harmonics and intermodulation products; pooling
/// by `m` then folds everything above the new Nyquist frequency back down,
/// only mildly attenuated.
pub fn two_tone_demo(cfg: &TwoToneConfig) -> Result<TwoToneDemo> {
    let nyquist = cfg.rate_hz / 2.0;
    if !(cfg.f1_hz > 0.0 && cfg.f1_hz < nyquist && cfg.f2_hz > 0.0 && cfg.f2_hz < nyquist) {
        return Err(Error::InvalidConfig(format!("tone frequencies must lie in (0, {nyquist}) Hz")));
    }
    dsp::check_pool(cfg.len, cfg.pool)?;
    let x1 = sine(cfg.f1_hz, cfg.rate_hz, cfg.len);
    let x2 = sine(cfg.f2_hz, cfg.rate_hz, cfg.len);
    let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
    let rect = dsp::hwr(&sum);
    let separate: Vec<f64> = dsp::hwr(&x1).iter().zip(dsp::hwr(&x2)).map(|(a, b)| a + b).collect();
    let pooled = dsp::avg_pool(&rect, cfg.pool)?;
    let new_rate = cfg.rate_hz / cfg.pool as f64;

    let input = Spectrum::of(&sum, cfg.rate_hz);
    let rectified = Spectrum::of(&rect, cfg.rate_hz);
    let separate = Spectrum::of(&separate, cfg.rate_hz);
    let pooled = Spectrum::of(&pooled, new_rate);
    let im = (cfg.f2_hz - cfg.f1_hz).abs();
    let intermod_gain_db = amplitude_db(rectified.at(im)) - amplitude_db(separate.at(im));

    // probe tone 10 Hz above the pooled Nyquist frequency
    let alias_probe_hz = new_rate / 2.0 + 10.0;
    let alias_image_hz = new_rate - alias_probe_hz;
    let probe = dsp::avg_pool(&sine(alias_probe_hz, cfg.rate_hz, cfg.len), cfg.pool)?;
    let alias_attenuation_db = -amplitude_db(Spectrum::of(&probe, new_rate).at(alias_image_hz));

    Ok(TwoToneDemo {
        config: cfg.clone(),
        input,
        rectified,
        separate,
        pooled,
        intermod_gain_db,
        alias_probe_hz,
        alias_image_hz,
        alias_attenuation_db,
    })
}

/// Mean latent vector per condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprints {
    pub conditions: Vec<String>,
    pub latents: Vec<Vec<f64>>,
}

/// Averages the latent vectors of each condition's segments. Conditions
/// without segments are skipped with a warning.
pub fn condition_fingerprint<T: Scalar>(
    net: &WaweNet<T>,
    groups: &[(String, Vec<ChannelSignal<T>>)],
) -> Result<Fingerprints> {
    let mut out = Fingerprints {
        conditions: Vec::new(),
        latents: Vec::new(),
    };
    for (id, segments) in groups {
        if segments.is_empty() {
            warn!("condition '{id}' has no segments; skipped");
            continue;
        }
        let mut acc = vec![0.0f64; net.head.inputs];
        for x in segments {
            let latent = net.forward(x)?.latent;
            acc.iter_mut().zip(&latent).for_each(|(a, v)| *a += v.f64());
        }
        let n = segments.len() as f64;
        out.conditions.push(id.clone());
        out.latents.push(acc.into_iter().map(|a| a / n).collect());
    }
    if out.conditions.is_empty() {
        return Err(Error::EmptyResult("no condition has segments".into()));
    }
    Ok(out)
}
