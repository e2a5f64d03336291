use crate::error::{Error, Result};

/// Affine map between a target's native range and [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    /// Denominator for error expressed as percent of full scale.
    pub full_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToUnit,
    FromUnit,
}

const RANGE_TOLERANCE: f64 = 1e-9;

/// Quality and intelligibility scales.
pub const PESQ: TargetSpec = TargetSpec { name: "pesq", lo: 1.02, hi: 4.64, full_scale: 4.0 };
pub const POLQA: TargetSpec = TargetSpec { name: "polqa", lo: 1.0, hi: 4.75, full_scale: 4.0 };
pub const PEMO: TargetSpec = TargetSpec { name: "pemo", lo: 0.0, hi: 1.0, full_scale: 1.0 };
pub const VISQOL: TargetSpec = TargetSpec { name: "visqol", lo: 1.0, hi: 5.0, full_scale: 4.0 };
pub const STOI: TargetSpec = TargetSpec { name: "stoi", lo: 0.45, hi: 1.0, full_scale: 1.0 };
pub const ESTOI: TargetSpec = TargetSpec { name: "estoi", lo: 0.23, hi: 1.0, full_scale: 1.0 };
pub const SIIB_GAUSS: TargetSpec = TargetSpec { name: "siibgauss", lo: 0.0, hi: 750.0, full_scale: 750.0 };
/// Subjective five-point scale.
pub const MOS: TargetSpec = TargetSpec { name: "mos", lo: 1.0, hi: 5.0, full_scale: 4.0 };
/// Eleven-point (0–10) scale.
pub const SCORE10: TargetSpec = TargetSpec { name: "score10", lo: 0.0, hi: 10.0, full_scale: 10.0 };

/// Computable proxies attached to synthetic corpora.
pub const SEG_SNR: TargetSpec = TargetSpec { name: "segsnr", lo: -10.0, hi: 35.0, full_scale: 45.0 };
pub const LOSS_FRACTION: TargetSpec = TargetSpec { name: "lossfrac", lo: 0.0, hi: 1.0, full_scale: 1.0 };
pub const SPECTRAL_DISTORTION: TargetSpec = TargetSpec { name: "specdist", lo: 0.0, hi: 40.0, full_scale: 40.0 };

pub const QUALITY_TARGETS: [TargetSpec; 9] = [PESQ, POLQA, PEMO, VISQOL, STOI, ESTOI, SIIB_GAUSS, MOS, SCORE10];
pub const PROXY_TARGETS: [TargetSpec; 3] = [SEG_SNR, LOSS_FRACTION, SPECTRAL_DISTORTION];

impl TargetSpec {
    pub fn registry() -> impl Iterator<Item = &'static TargetSpec> {
        QUALITY_TARGETS.iter().chain(PROXY_TARGETS.iter())
    }

    pub fn lookup(name: &str) -> Option<TargetSpec> {
        Self::registry().find(|t| t.name.eq_ignore_ascii_case(name)).copied()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn to_unit(&self, v: f64) -> Result<f64> {
        if !v.is_finite() || v < self.lo - RANGE_TOLERANCE || v > self.hi + RANGE_TOLERANCE {
            return Err(Error::RangeError {
                target: self.name.to_string(),
                value: v,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0)
    }

    pub fn from_unit(&self, u: f64) -> f64 {
        (u + 1.0) / 2.0 * (self.hi - self.lo) + self.lo
    }

    /// Clamps into the native range, then maps to [−1, 1].
    pub fn to_unit_clamped(&self, v: f64) -> f64 {
        2.0 * (v.clamp(self.lo, self.hi) - self.lo) / (self.hi - self.lo) - 1.0
    }
}

pub fn scale_target(spec: &TargetSpec, v: f64, direction: Direction) -> Result<f64> {
    match direction {
        Direction::ToUnit => spec.to_unit(v),
        Direction::FromUnit => Ok(spec.from_unit(v)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pesq_endpoints_and_midpoints() {
        assert_eq!(PESQ.to_unit(4.64).unwrap(), 1.0);
        assert_eq!(PESQ.to_unit(1.02).unwrap(), -1.0);
        assert!(PESQ.to_unit(2.83).unwrap().abs() < 1e-12);
        assert_eq!(SIIB_GAUSS.to_unit(375.0).unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(matches!(PESQ.to_unit(4.7), Err(Error::RangeError { .. })));
        assert!(PESQ.to_unit(4.64 + 5e-10).is_ok());
        assert!(matches!(STOI.to_unit(f64::NAN), Err(Error::RangeError { .. })));
    }

    #[test]
    fn registry_names_are_unique() {
        let names: Vec<_> = TargetSpec::registry().map(|t| t.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(names.len(), sorted.len());
        assert_eq!(TargetSpec::lookup("PESQ"), Some(PESQ));
        assert_eq!(TargetSpec::lookup("nope"), None);
    }

    proptest! {
        #[test]
        fn roundtrip(t in 0.0f64..=1.0, idx in 0usize..12) {
            let spec = *TargetSpec::registry().nth(idx).unwrap();
            let v = spec.lo + t * spec.width();
            let u = scale_target(&spec, v, Direction::ToUnit).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&u));
            let back = scale_target(&spec, u, Direction::FromUnit).unwrap();
            prop_assert!((back - v).abs() <= 1e-9);
        }
    }
}
