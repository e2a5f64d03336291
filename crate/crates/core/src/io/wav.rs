use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::model::SAMPLE_RATE;
use crate::waveform::Waveform;

const FULL_SCALE: f64 = 32_768.0;

fn unsupported(path: &Path, detail: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => unsupported(path, other.to_string()),
    }
}

/// Reads 16-bit mono PCM at 16 kHz; samples are scaled by 1/32768.
pub fn wav_read(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(unsupported(path, format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(
            path,
            format!("{} samples/s, expected {SAMPLE_RATE}; resample externally", spec.sample_rate),
        ));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(
            path,
            format!("{}-bit {:?} samples, expected 16-bit PCM", spec.bits_per_sample, spec.sample_format),
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (v as f64 / FULL_SCALE) as f32))
        .collect::<std::result::Result<Vec<f32>, _>>()
        .map_err(|e| hound_err(path, e))?;
    Ok(Waveform::new(samples, SAMPLE_RATE))
}

/// Writes 16-bit mono PCM, rounding to nearest with ties away from zero.
/// Values outside the representable range are clamped.
pub fn wav_write(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let path = path.as_ref();
    if x.sample_rate != SAMPLE_RATE {
        return Err(unsupported(path, format!("{} samples/s, expected {SAMPLE_RATE}", x.sample_rate)));
    }
    let over = x.samples.iter().filter(|v| v.abs() > 1.0).count();
    if over > 0 {
        warn!("{}: {over} samples beyond full scale clamped", path.display());
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    for &v in &x.samples {
        let q = (v as f64 * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(q).map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(path: &Path) -> Vec<i16> {
        hound::WavReader::open(path).unwrap().into_samples::<i16>().map(|s| s.unwrap()).collect()
    }

    #[test]
    fn quantization_rules() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x = Waveform::wideband(vec![0.5, 1.0, -1.0, 1.5, 0.0, 1.5 / 32768.0, -1.5 / 32768.0]);
        wav_write(&p, &x).unwrap();
        assert_eq!(raw(&p), [16_384, 32_767, -32_768, 32_767, 0, 2, -2]);
        assert_eq!(wav_read(&p).unwrap().samples[0], 0.5);
    }

    #[test]
    fn roundtrip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let x = Waveform::wideband((0..1000).map(|k| (k as f32 * 0.37).sin() * 0.9).collect());
        wav_write(&p, &x).unwrap();
        let y = wav_read(&p).unwrap();
        assert_eq!(y.len(), x.len());
        for (a, b) in x.samples.iter().zip(&y.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
        let silence = Waveform::wideband(vec![0.0; 100]);
        wav_write(&p, &silence).unwrap();
        assert_eq!(wav_read(&p).unwrap(), silence);
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [(2, 16_000, 16), (1, 8_000, 16), (1, 16_000, 8)];
        for (i, (channels, rate, bits)) in cases.into_iter().enumerate() {
            let p = dir.path().join(format!("{i}.wav"));
            let spec = hound::WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: bits,
                sample_format: hound::SampleFormat::Int,
            };
            let mut w = hound::WavWriter::create(&p, spec).unwrap();
            for _ in 0..channels * 10 {
                if bits == 8 {
                    w.write_sample(0i8).unwrap();
                } else {
                    w.write_sample(0i16).unwrap();
                }
            }
            w.finalize().unwrap();
            assert!(matches!(wav_read(&p), Err(Error::UnsupportedFormat { .. })), "case {i}");
        }
    }
}
