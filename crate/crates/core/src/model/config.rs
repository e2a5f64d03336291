use std::fmt;

use crate::dsp::{BN_EPSILON, BN_MOMENTUM, TAPS};
use crate::error::{Error, Result};

/// Samples per second of network input.
pub const SAMPLE_RATE: u32 = 16_000;
/// Samples per channel of network input (three seconds).
pub const INPUT_LEN: usize = 48_000;
/// Channels in every convolutional section.
pub const CHANNELS: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionKind {
    /// conv, normalization, rectification, average pooling
    ConvA,
    /// a trailing zero appended before the ConvA layers
    PConvA,
}

impl SectionKind {
    pub fn pad_after(self) -> usize {
        match self {
            SectionKind::ConvA => 0,
            SectionKind::PConvA => 1,
        }
    }
}

/// One row of the architecture table.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionSpec {
    /// 1-based section number
    pub index: usize,
    pub kind: SectionKind,
    pub pool: usize,
    /// Zeros appended before convolution.
    pub pad_after: usize,
    /// Samples per channel entering the section (before padding).
    pub l_in: usize,
    pub l_out: usize,
    /// Effective sample rate at the section input, Hz.
    pub rate_hz: f64,
    /// Sample spacing at the section input, ms.
    pub spacing_ms: f64,
}

impl SectionSpec {
    /// Samples per channel seen by the convolution (after padding).
    pub fn conv_len(&self) -> usize {
        self.l_in + self.pad_after
    }

    pub fn label(&self) -> String {
        match self.kind {
            SectionKind::ConvA => format!("Conv A-{}", self.pool),
            SectionKind::PConvA => format!("P Conv A-{}", self.pool),
        }
    }

    /// Builds a consistent section chain from `(kind, pool)` pairs.
    pub fn chain(input_len: usize, sample_rate: f64, layout: &[(SectionKind, usize)]) -> Result<Vec<SectionSpec>> {
        let mut len = input_len;
        let mut rate = sample_rate;
        let mut out = Vec::with_capacity(layout.len());
        for (i, &(kind, pool)) in layout.iter().enumerate() {
            let padded = len + kind.pad_after();
            if pool == 0 || padded % pool != 0 {
                return Err(Error::InvalidConfig(format!(
                    "section {}: length {padded} not divisible by pooling factor {pool}",
                    i + 1
                )));
            }
            out.push(SectionSpec {
                index: i + 1,
                kind,
                pool,
                pad_after: kind.pad_after(),
                l_in: len,
                l_out: padded / pool,
                rate_hz: rate,
                spacing_ms: 1000.0 / rate,
            });
            len = padded / pool;
            rate /= pool as f64;
        }
        Ok(out)
    }
}

/// The thirteen-section layout.
pub fn standard_layout() -> Vec<(SectionKind, usize)> {
    use SectionKind::*;
    vec![
        (ConvA, 4),
        (ConvA, 2),
        (ConvA, 2),
        (ConvA, 4),
        (ConvA, 2),
        (PConvA, 2),
        (ConvA, 2),
        (ConvA, 2),
        (PConvA, 2),
        (ConvA, 2),
        (ConvA, 2),
        (ConvA, 2),
        (ConvA, 3),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub channels: usize,
    /// Number of estimates produced by the dense head.
    pub outputs: usize,
    pub input_len: usize,
    pub sections: Vec<SectionSpec>,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    /// Standard network: 48,000-sample input, 96 channels, thirteen sections.
    pub fn wawenet(input_channels: usize, outputs: usize) -> Result<Self> {
        let cfg = Self {
            input_channels,
            channels: CHANNELS,
            outputs,
            input_len: INPUT_LEN,
            sections: SectionSpec::chain(INPUT_LEN, SAMPLE_RATE as f64, &standard_layout())?,
            bn_epsilon: BN_EPSILON,
            bn_momentum: BN_MOMENTUM,
        };
        cfg.validate_standard()?;
        Ok(cfg)
    }

    /// Reduced network with arbitrary width and layout, used for gradient
    /// verification and experiments. Only structural rules are enforced.
    pub fn custom(
        input_channels: usize,
        channels: usize,
        outputs: usize,
        input_len: usize,
        layout: &[(SectionKind, usize)],
    ) -> Result<Self> {
        let cfg = Self {
            input_channels,
            channels,
            outputs,
            input_len,
            sections: SectionSpec::chain(input_len, SAMPLE_RATE as f64, layout)?,
            bn_epsilon: BN_EPSILON,
            bn_momentum: BN_MOMENTUM,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural consistency: positive sizes, a length chain that divides
    /// exactly and ends in one sample per channel.
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.channels == 0 || self.outputs == 0 {
            return Err(Error::InvalidConfig(
                "input channels, channels and outputs must all be at least 1".into(),
            ));
        }
        if self.sections.is_empty() {
            return Err(Error::InvalidConfig("at least one section is required".into()));
        }
        if !(self.bn_epsilon > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::InvalidConfig("normalization epsilon/momentum out of range".into()));
        }
        let mut len = self.input_len;
        for (i, s) in self.sections.iter().enumerate() {
            if s.index != i + 1 || s.l_in != len || s.pad_after != s.kind.pad_after() {
                return Err(Error::InvalidConfig(format!("section {} is inconsistent with its predecessor", i + 1)));
            }
            if s.pool == 0 || s.conv_len() % s.pool != 0 || s.l_out != s.conv_len() / s.pool {
                return Err(Error::InvalidConfig(format!(
                    "section {}: l_out must equal (l_in + pad) / pool exactly",
                    i + 1
                )));
            }
            len = s.l_out;
        }
        if len != 1 {
            return Err(Error::InvalidConfig(format!(
                "the last section must leave one sample per channel, leaves {len}"
            )));
        }
        Ok(())
    }

    /// Structural checks plus the fixed standard geometry.
    pub fn validate_standard(&self) -> Result<()> {
        self.validate()?;
        if !(1..=2).contains(&self.input_channels) {
            return Err(Error::InvalidConfig(format!(
                "input channels must be 1 or 2, got {}",
                self.input_channels
            )));
        }
        if self.channels != CHANNELS {
            return Err(Error::InvalidConfig(format!("channel count is fixed at {CHANNELS}")));
        }
        if self.input_len != INPUT_LEN {
            return Err(Error::InvalidConfig(format!(
                "input length is fixed at {INPUT_LEN} samples, got {}",
                self.input_len
            )));
        }
        let expected = SectionSpec::chain(INPUT_LEN, SAMPLE_RATE as f64, &standard_layout())?;
        if self.sections != expected {
            return Err(Error::InvalidConfig("section table differs from the standard layout".into()));
        }
        Ok(())
    }

    pub fn is_standard(&self) -> bool {
        self.validate_standard().is_ok()
    }

    pub fn section_in_channels(&self, i: usize) -> usize {
        if i == 0 {
            self.input_channels
        } else {
            self.channels
        }
    }

    pub fn conv_param_count(&self, i: usize) -> usize {
        self.section_in_channels(i) * self.channels * TAPS + self.channels
    }

    pub fn norm_param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn head_param_count(&self) -> usize {
        self.outputs * self.channels + self.outputs
    }

    /// Closed-form count of trainable parameters.
    pub fn param_count(&self) -> usize {
        (0..self.sections.len())
            .map(|i| self.conv_param_count(i) + self.norm_param_count())
            .sum::<usize>()
            + self.head_param_count()
    }

    /// Running statistics stored alongside the trainable parameters.
    pub fn buffer_count(&self) -> usize {
        self.sections.len() * 2 * self.channels
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} input channel(s), {} channels, {} sections, {} output(s)",
            self.input_channels,
            self.channels,
            self.sections.len(),
            self.outputs
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_table_rows() {
        let cfg = ModelConfig::wawenet(1, 1).unwrap();
        // (label, rate Hz as printed, conv input length, spacing ms, l_out)
        let table: [(&str, f64, usize, f64, usize); 13] = [
            ("Conv A-4", 16000.0, 48000, 0.0625, 12000),
            ("Conv A-2", 4000.0, 12000, 0.25, 6000),
            ("Conv A-2", 2000.0, 6000, 0.5, 3000),
            ("Conv A-4", 1000.0, 3000, 1.0, 750),
            ("Conv A-2", 250.0, 750, 4.0, 375),
            ("P Conv A-2", 125.0, 376, 8.0, 188),
            ("Conv A-2", 62.50, 188, 16.0, 94),
            ("Conv A-2", 31.25, 94, 32.0, 47),
            ("P Conv A-2", 15.63, 48, 64.0, 24),
            ("Conv A-2", 7.81, 24, 128.0, 12),
            ("Conv A-2", 3.91, 12, 256.0, 6),
            ("Conv A-2", 1.95, 6, 512.0, 3),
            ("Conv A-3", 0.98, 3, 1024.0, 1),
        ];
        for (s, row) in cfg.sections.iter().zip(table) {
            assert_eq!(s.label(), row.0);
            assert!((s.rate_hz - row.1).abs() <= 0.005 + 1e-9, "S{} rate {}", s.index, s.rate_hz);
            assert_eq!(s.conv_len(), row.2);
            assert_eq!(s.spacing_ms, row.3);
            assert_eq!(s.l_out, row.4);
        }
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ModelConfig::wawenet(1, 1).unwrap().param_count(), 335_905);
        assert_eq!(ModelConfig::wawenet(1, 11).unwrap().param_count(), 336_875);
        assert_eq!(ModelConfig::wawenet(2, 1).unwrap().param_count(), 336_193);
        assert_eq!(ModelConfig::wawenet(1, 7).unwrap().param_count(), 336_487);
    }

    #[test]
    fn rejects_extensions() {
        assert!(ModelConfig::wawenet(3, 1).is_err());
        assert!(ModelConfig::wawenet(1, 0).is_err());
        let mut cfg = ModelConfig::wawenet(1, 1).unwrap();
        cfg.input_len = 96_000;
        assert!(cfg.validate_standard().is_err());
        let mut cfg = ModelConfig::wawenet(1, 1).unwrap();
        cfg.sections.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn custom_chain_must_end_at_one_sample() {
        assert!(ModelConfig::custom(1, 4, 1, 48, &[(SectionKind::ConvA, 4), (SectionKind::ConvA, 12)]).is_ok());
        assert!(ModelConfig::custom(1, 4, 1, 48, &[(SectionKind::ConvA, 4), (SectionKind::ConvA, 4)]).is_err());
        assert!(ModelConfig::custom(1, 4, 1, 48, &[(SectionKind::PConvA, 2)]).is_err());
    }
}
