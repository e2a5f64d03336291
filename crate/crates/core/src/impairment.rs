//! Synthetic degradations and the proxy targets computed from clean/impaired
//! pairs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::model::SAMPLE_RATE;
use crate::preprocess::{
    active_level, normalize_level, SegmentRecord, TargetSpec, LOSS_FRACTION, PROXY_TARGETS, SEG_SNR,
    SPECTRAL_DISTORTION, TARGET_LEVEL_DBOV,
};
use crate::waveform::Waveform;

/// 20 ms at 16 kHz.
pub const FRAME: usize = 320;
pub const NB_CUTOFF_HZ: f64 = 3400.0;
pub const LOWPASS_TAPS: usize = 255;

const SPECTRUM_FFT: usize = 512;
const SPECTRUM_FLOOR: f64 = 1e-10;

fn check_unit(name: &str, v: f64, lo: f64, hi: f64, hi_open: bool) -> Result<()> {
    let bad = !v.is_finite() || v < lo || v > hi || (hi_open && v >= hi);
    if bad {
        let close = if hi_open { ')' } else { ']' };
        return Err(Error::InvalidConfig(format!("{name} {v} outside [{lo}, {hi}{close}")));
    }
    Ok(())
}

/// Adds white Gaussian noise at `snr_db` below the active speech level. The
/// noise is rescaled to its exact target power, so the realized ratio does not
/// depend on the draw.
pub fn add_noise_snr(x: &[f32], snr_db: f64, seed: u64) -> Result<Vec<f32>> {
    let speech = active_level(x, SAMPLE_RATE)?;
    let target_power = 10f64.powf((speech.active_level_dbov - snr_db) / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let power = noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64;
    let scale = (target_power / power).sqrt();
    Ok(x.iter()
        .zip(&noise)
        .map(|(&s, n)| (s as f64 + scale * n) as f32)
        .collect())
}

/// Hann-windowed sinc lowpass taps, normalized to unit DC gain.
pub fn lowpass_taps(cutoff_hz: f64, len: usize) -> Vec<f64> {
    let fc = cutoff_hz / SAMPLE_RATE as f64;
    let mid = (len - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let w = 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Linear-phase FIR with the group delay removed; output has the input length.
pub fn fir_same(x: &[f32], taps: &[f64]) -> Vec<f32> {
    let half = taps.len() / 2;
    let n = x.len() as isize;
    (0..n)
        .map(|k| {
            let mut acc = 0.0f64;
            for (j, &h) in taps.iter().enumerate() {
                let idx = k + half as isize - j as isize;
                if idx >= 0 && idx < n {
                    acc += h * x[idx as usize] as f64;
                }
            }
            acc as f32
        })
        .collect()
}

pub fn lowpass(x: &[f32], cutoff_hz: f64) -> Result<Vec<f32>> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidConfig(format!("cutoff {cutoff_hz} Hz outside (0, {nyquist})")));
    }
    Ok(fir_same(x, &lowpass_taps(cutoff_hz, LOWPASS_TAPS)))
}

/// Narrowband anchor: 3.4 kHz lowpass.
pub fn lowpass_nb(x: &[f32]) -> Vec<f32> {
    fir_same(x, &lowpass_taps(NB_CUTOFF_HZ, LOWPASS_TAPS))
}

pub fn clip_peak(x: &[f32], level: f32) -> Vec<f32> {
    x.iter().map(|v| v.clamp(-level, level)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLoss {
    pub samples: Vec<f32>,
    /// One flag per (possibly partial) 20 ms frame.
    pub lost: Vec<bool>,
}

impl FrameLoss {
    pub fn loss_fraction(&self) -> f64 {
        if self.lost.is_empty() {
            return 0.0;
        }
        self.lost.iter().filter(|&&l| l).count() as f64 / self.lost.len() as f64
    }
}

/// Gilbert two-state loss pattern over `frames` frames. With burstiness b the
/// good→bad and bad→good probabilities are rate·(1−b) and (1−rate)·(1−b), so
/// the stationary loss probability is `rate` and b = 0 gives independent
/// losses.
pub fn gilbert_pattern(frames: usize, rate: f64, burstiness: f64, seed: u64) -> Vec<bool> {
    let p = rate * (1.0 - burstiness);
    let q = (1.0 - rate) * (1.0 - burstiness);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = rng.gen::<f64>() < rate;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(bad);
        let u: f64 = rng.gen();
        bad = if bad { u >= q } else { u < p };
    }
    out
}

pub fn drop_frames(x: &[f32], rate: f64, burstiness: f64, seed: u64) -> Result<FrameLoss> {
    check_unit("loss rate", rate, 0.0, 1.0, false)?;
    check_unit("burstiness", burstiness, 0.0, 1.0, true)?;
    let lost = gilbert_pattern(x.len().div_ceil(FRAME), rate, burstiness, seed);
    let mut samples = x.to_vec();
    for (chunk, &l) in samples.chunks_mut(FRAME).zip(&lost) {
        if l {
            chunk.fill(0.0);
        }
    }
    Ok(FrameLoss { samples, lost })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Impairment {
    Identity,
    Noise { snr_db: f64 },
    Lowpass { cutoff_hz: f64 },
    Clip { level: f64 },
    FrameLoss { rate: f64, burstiness: f64 },
    /// Applied left to right.
    Chain(Vec<Impairment>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Impaired {
    pub samples: Vec<f32>,
    pub zeroed_fraction: f64,
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Impairment {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Impairment::Identity => Ok(()),
            Impairment::Noise { snr_db } => {
                if snr_db.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("snr {snr_db} dB")))
                }
            }
            Impairment::Lowpass { cutoff_hz } => check_unit("cutoff", cutoff_hz, 1.0, SAMPLE_RATE as f64 / 2.0, true),
            Impairment::Clip { level } => {
                if level > 0.0 && level <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("clip level {level} outside (0, 1]")))
                }
            }
            Impairment::FrameLoss { rate, burstiness } => {
                check_unit("loss rate", rate, 0.0, 1.0, false)?;
                check_unit("burstiness", burstiness, 0.0, 1.0, true)
            }
            Impairment::Chain(ref parts) => parts.iter().try_for_each(Impairment::validate),
        }
    }

    pub fn apply(&self, x: &[f32], seed: u64) -> Result<Impaired> {
        let mut zeroed = vec![false; x.len().div_ceil(FRAME)];
        let samples = self.apply_into(x, seed, &mut zeroed)?;
        let zeroed_fraction = if zeroed.is_empty() {
            0.0
        } else {
            zeroed.iter().filter(|&&z| z).count() as f64 / zeroed.len() as f64
        };
        Ok(Impaired { samples, zeroed_fraction })
    }

    fn apply_into(&self, x: &[f32], seed: u64, zeroed: &mut [bool]) -> Result<Vec<f32>> {
        Ok(match *self {
            Impairment::Identity => x.to_vec(),
            Impairment::Noise { snr_db } => add_noise_snr(x, snr_db, seed)?,
            Impairment::Lowpass { cutoff_hz } => lowpass(x, cutoff_hz)?,
            Impairment::Clip { level } => clip_peak(x, level as f32),
            Impairment::FrameLoss { rate, burstiness } => {
                let r = drop_frames(x, rate, burstiness, seed)?;
                for (z, l) in zeroed.iter_mut().zip(&r.lost) {
                    *z |= *l;
                }
                r.samples
            }
            Impairment::Chain(ref parts) => {
                let mut cur = x.to_vec();
                for (i, part) in parts.iter().enumerate() {
                    cur = part.apply_into(&cur, mix_seed(seed, i as u64 + 1), zeroed)?;
                }
                cur
            }
        })
    }
}

impl fmt::Display for Impairment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Impairment::Identity => write!(f, "clean"),
            Impairment::Noise { snr_db } => write!(f, "noise:{snr_db}"),
            Impairment::Lowpass { cutoff_hz } => write!(f, "lowpass:{cutoff_hz}"),
            Impairment::Clip { level } => write!(f, "clip:{level}"),
            Impairment::FrameLoss { rate, burstiness } => write!(f, "loss:{rate}:{burstiness}"),
            Impairment::Chain(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, "+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidConfig(format!("bad {what} '{s}'")))
}

/// Grammar: `clean | noise:<snr dB> | lowpass[:<cutoff Hz>] | clip:<level> |
/// loss:<rate>[:<burstiness>]`, chained with `+`.
impl FromStr for Impairment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('+').map(str::trim).collect();
        if parts.len() > 1 {
            let chain = parts.iter().map(|p| p.parse()).collect::<Result<Vec<_>>>()?;
            return Ok(Impairment::Chain(chain));
        }
        let fields: Vec<&str> = s.trim().split(':').collect();
        let imp = match (fields[0].to_ascii_lowercase().as_str(), &fields[1..]) {
            ("clean" | "identity", []) => Impairment::Identity,
            ("noise", [snr]) => Impairment::Noise { snr_db: parse_num(snr, "snr")? },
            ("lowpass", []) => Impairment::Lowpass { cutoff_hz: NB_CUTOFF_HZ },
            ("lowpass", [fc]) => Impairment::Lowpass { cutoff_hz: parse_num(fc, "cutoff")? },
            ("clip", [level]) => Impairment::Clip { level: parse_num(level, "clip level")? },
            ("loss", [rate]) => Impairment::FrameLoss { rate: parse_num(rate, "loss rate")?, burstiness: 0.0 },
            ("loss", [rate, b]) => Impairment::FrameLoss {
                rate: parse_num(rate, "loss rate")?,
                burstiness: parse_num(b, "burstiness")?,
            },
            _ => return Err(Error::InvalidConfig(format!("unknown condition '{s}'"))),
        };
        imp.validate()?;
        Ok(imp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub id: String,
    pub impairment: Impairment,
}

impl Condition {
    pub fn new(id: impl Into<String>, impairment: Impairment) -> Result<Self> {
        impairment.validate()?;
        Ok(Self { id: id.into(), impairment })
    }

    /// Uses the canonical text form of the impairment as the identifier.
    pub fn parse(s: &str) -> Result<Self> {
        let impairment: Impairment = s.parse()?;
        Ok(Self { id: impairment.to_string(), impairment })
    }
}

fn frame_powers(x: &[f32]) -> Vec<f64> {
    x.chunks(FRAME)
        .map(|c| c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Frames whose clean power lies within the level meter's margin of the
/// active speech level.
fn active_frames(clean: &[f32]) -> Result<Vec<bool>> {
    let level = active_level(clean, SAMPLE_RATE)?;
    let floor = 10f64.powf((level.active_level_dbov - 15.9) / 10.0);
    Ok(frame_powers(clean).into_iter().map(|p| p >= floor).collect())
}

/// Mean per-frame SNR over active frames, each frame clipped to the proxy range.
pub fn segmental_snr(clean: &[f32], impaired: &[f32]) -> Result<f64> {
    check_pair(clean, impaired)?;
    let active = active_frames(clean)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((c, d), &a) in clean.chunks(FRAME).zip(impaired.chunks(FRAME)).zip(&active) {
        if !a {
            continue;
        }
        let sig: f64 = c.iter().map(|&v| (v as f64).powi(2)).sum();
        let err: f64 = c.iter().zip(d).map(|(&s, &t)| (s as f64 - t as f64).powi(2)).sum();
        let snr = if err == 0.0 { SEG_SNR.hi } else { 10.0 * (sig / err).log10() };
        sum += snr.clamp(SEG_SNR.lo, SEG_SNR.hi);
        n += 1;
    }
    Ok(sum / n as f64)
}

fn check_pair(clean: &[f32], impaired: &[f32]) -> Result<()> {
    if clean.len() != impaired.len() {
        return Err(Error::InvalidLength(format!(
            "clean has {} samples, impaired {}",
            clean.len(),
            impaired.len()
        )));
    }
    Ok(())
}

struct Spectrum {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Spectrum {
    fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(SPECTRUM_FFT);
        let window = (0..FRAME)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME as f64).cos())
            .collect();
        Self { fft, window }
    }

    fn power(&self, frame: &[f32]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); SPECTRUM_FFT];
        for ((b, &v), w) in buf.iter_mut().zip(frame).zip(&self.window) {
            b.re = v as f64 * w;
        }
        self.fft.process(&mut buf);
        buf[1..=SPECTRUM_FFT / 2].iter().map(|c| c.norm_sqr()).collect()
    }
}

/// RMS log-spectral distance in dB over active frames (Hann-windowed 20 ms
/// frames, bins above DC), clipped to the proxy range.
pub fn spectral_distortion(clean: &[f32], impaired: &[f32]) -> Result<f64> {
    check_pair(clean, impaired)?;
    let active = active_frames(clean)?;
    let spectrum = Spectrum::new();
    let (mut sum, mut n) = (0.0, 0usize);
    for ((c, d), &a) in clean.chunks(FRAME).zip(impaired.chunks(FRAME)).zip(&active) {
        if !a {
            continue;
        }
        let pc = spectrum.power(c);
        let pd = spectrum.power(d);
        let msd = pc
            .iter()
            .zip(&pd)
            .map(|(x, y)| (10.0 * ((x + SPECTRUM_FLOOR) / (y + SPECTRUM_FLOOR)).log10()).powi(2))
            .sum::<f64>()
            / pc.len() as f64;
        sum += msd.sqrt();
        n += 1;
    }
    Ok((sum / n as f64).clamp(SPECTRAL_DISTORTION.lo, SPECTRAL_DISTORTION.hi))
}

/// Raw proxy values (segmental SNR dB, zeroed-frame fraction, spectral
/// distortion dB) in `PROXY_TARGETS` order.
pub fn proxies(clean: &[f32], impaired: &Impaired) -> Result<[f64; 3]> {
    Ok([
        segmental_snr(clean, &impaired.samples)?,
        impaired.zeroed_fraction.clamp(LOSS_FRACTION.lo, LOSS_FRACTION.hi),
        spectral_distortion(clean, &impaired.samples)?,
    ])
}

pub fn pair_seed(seed: u64, segment: usize, condition: usize) -> u64 {
    mix_seed(mix_seed(seed, segment as u64), condition as u64 ^ 0xC0DE)
}

/// Crosses every clean segment with every condition. Records carry the three
/// proxies scaled to [−1, 1] in `PROXY_TARGETS` order; impaired audio is
/// re-normalized to −26 dBov. Pairs whose output has no measurable speech
/// (e.g. every frame lost) are skipped with a warning.
pub fn make_corpus(clean: &[SegmentRecord], conditions: &[Condition], seed: u64) -> Result<Vec<SegmentRecord>> {
    Ok(make_corpus_sources(clean, conditions, seed)?.into_iter().map(|(_, r)| r).collect())
}

/// [`make_corpus`] with each record paired with the index of its clean
/// source segment.
pub fn make_corpus_sources(
    clean: &[SegmentRecord],
    conditions: &[Condition],
    seed: u64,
) -> Result<Vec<(usize, SegmentRecord)>> {
    if clean.is_empty() || conditions.is_empty() {
        return Err(Error::InvalidConfig("corpus needs clean segments and conditions".into()));
    }
    for (i, c) in conditions.iter().enumerate() {
        if conditions[..i].iter().any(|o| o.id == c.id) {
            return Err(Error::InvalidConfig(format!("duplicate condition id '{}'", c.id)));
        }
    }
    let pairs: Vec<(usize, usize)> = (0..clean.len())
        .flat_map(|s| (0..conditions.len()).map(move |c| (s, c)))
        .collect();
    let records: Vec<Option<(usize, SegmentRecord)>> = pairs
        .par_iter()
        .map(|&(s, c)| Ok(make_record(&clean[s], &conditions[c], pair_seed(seed, s, c))?.map(|r| (s, r))))
        .collect::<Result<_>>()?;
    Ok(records.into_iter().flatten().collect())
}

fn make_record(clean: &SegmentRecord, condition: &Condition, seed: u64) -> Result<Option<SegmentRecord>> {
    let impaired = condition.impairment.apply(&clean.samples, seed)?;
    let raw = proxies(&clean.samples, &impaired)?;
    let normalized = match normalize_level(&Waveform::wideband(impaired.samples), TARGET_LEVEL_DBOV) {
        Ok(n) => n,
        Err(Error::NoSpeech) => {
            log::warn!("condition '{}' left no speech at offset {}; skipped", condition.id, clean.offset);
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let level = active_level(&normalized.waveform.samples, SAMPLE_RATE)?;
    let targets = PROXY_TARGETS
        .iter()
        .zip(raw)
        .map(|(spec, v): (&TargetSpec, f64)| spec.to_unit_clamped(v))
        .collect();
    Ok(Some(SegmentRecord {
        samples: normalized.waveform.samples,
        offset: clean.offset,
        saf: level.saf,
        active_level_dbov: level.active_level_dbov,
        condition: condition.id.clone(),
        targets,
    }))
}
