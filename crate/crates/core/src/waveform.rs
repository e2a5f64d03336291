use crate::error::{Error, Result};
use crate::model::SAMPLE_RATE;

/// Mono audio; samples nominally in [−1, 1] where 1.0 is the overload point.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    /// Audio at the network rate.
    pub fn wideband(samples: Vec<f32>) -> Self {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub(crate) fn require_wideband(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidConfig(format!(
                "expected {SAMPLE_RATE} samples/s, got {}",
                self.sample_rate
            )));
        }
        Ok(())
    }
}
