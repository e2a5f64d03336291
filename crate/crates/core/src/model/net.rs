use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, SectionSpec};
use crate::dsp::{self, ChannelSignal, ConvWeights, NormMode, NormParams, TAPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Section<T> {
    pub spec: SectionSpec,
    pub conv: ConvWeights<T>,
    pub norm: NormParams<T>,
}

/// Dense map from the latent vector to the estimates; weights row-major
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub offsets: Vec<T>,
}

/// The convolutional estimator: thirteen sections followed by a dense head
/// (or any structurally valid reduction of that layout).
#[derive(Debug, Clone, PartialEq)]
pub struct WaweNet<T = f32> {
    config: ModelConfig,
    pub sections: Vec<Section<T>>,
    pub head: DenseHead<T>,
    mode: NormMode,
}

/// Output of an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub estimates: Vec<T>,
    /// The per-channel scalars leaving the last section.
    pub latent: Vec<T>,
    /// Samples per channel leaving each section.
    pub section_lengths: Vec<usize>,
}

/// Role of a trainable tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvOffset,
    NormGamma,
    NormBeta,
    DenseWeight,
    DenseOffset,
}

impl ParamKind {
    /// Whether the L2 penalty applies.
    pub fn is_penalized(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::DenseWeight)
    }
}

fn kaiming<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..n).map(|_| T::of(normal.sample(rng))).collect()
}

impl<T: Scalar> WaweNet<T> {
    /// Kaiming-normal initialization of convolution and dense weights, zero
    /// offsets, identity normalization. Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let sections = config
            .sections
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let ic = config.section_in_channels(i);
                Section {
                    spec: spec.clone(),
                    conv: ConvWeights {
                        in_channels: ic,
                        out_channels: c,
                        weights: kaiming(&mut rng, c * ic * TAPS, ic * TAPS),
                        offsets: vec![T::zero(); c],
                    },
                    norm: NormParams::identity(c, config.bn_epsilon, config.bn_momentum),
                }
            })
            .collect();
        let head = DenseHead {
            inputs: c,
            outputs: config.outputs,
            weights: kaiming(&mut rng, config.outputs * c, c),
            offsets: vec![T::zero(); config.outputs],
        };
        Ok(Self {
            config,
            sections,
            head,
            mode: NormMode::Eval,
        })
    }

    /// Assembles a net from explicit parts, checking every tensor shape.
    pub fn from_parts(config: ModelConfig, sections: Vec<Section<T>>, head: DenseHead<T>) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        if sections.len() != config.sections.len() {
            return Err(Error::InvalidShape("section count differs from configuration".into()));
        }
        for (i, s) in sections.iter().enumerate() {
            let ic = config.section_in_channels(i);
            if s.spec != config.sections[i]
                || s.conv.in_channels != ic
                || s.conv.out_channels != c
                || s.conv.weights.len() != c * ic * TAPS
                || s.conv.offsets.len() != c
                || s.norm.gamma.len() != c
                || s.norm.beta.len() != c
                || s.norm.running_mean.len() != c
                || s.norm.running_var.len() != c
            {
                return Err(Error::InvalidShape(format!("section {} tensors do not match configuration", i + 1)));
            }
        }
        if head.inputs != c
            || head.outputs != config.outputs
            || head.weights.len() != c * config.outputs
            || head.offsets.len() != config.outputs
        {
            return Err(Error::InvalidShape("dense head does not match configuration".into()));
        }
        Ok(Self {
            config,
            sections,
            head,
            mode: NormMode::Eval,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.mode = mode;
    }

    /// Number of trainable values actually held.
    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Trainable tensors in storage order: per section conv weights, conv
    /// offsets, gamma, beta; then head weights and offsets.
    pub fn param_tensors(&self) -> Vec<(ParamKind, &[T])> {
        let mut out = Vec::with_capacity(4 * self.sections.len() + 2);
        for s in &self.sections {
            out.push((ParamKind::ConvWeight, s.conv.weights.as_slice()));
            out.push((ParamKind::ConvOffset, s.conv.offsets.as_slice()));
            out.push((ParamKind::NormGamma, s.norm.gamma.as_slice()));
            out.push((ParamKind::NormBeta, s.norm.beta.as_slice()));
        }
        out.push((ParamKind::DenseWeight, self.head.weights.as_slice()));
        out.push((ParamKind::DenseOffset, self.head.offsets.as_slice()));
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<(ParamKind, &mut [T])> {
        let mut out = Vec::with_capacity(4 * self.sections.len() + 2);
        for s in &mut self.sections {
            out.push((ParamKind::ConvWeight, s.conv.weights.as_mut_slice()));
            out.push((ParamKind::ConvOffset, s.conv.offsets.as_mut_slice()));
            out.push((ParamKind::NormGamma, s.norm.gamma.as_mut_slice()));
            out.push((ParamKind::NormBeta, s.norm.beta.as_mut_slice()));
        }
        out.push((ParamKind::DenseWeight, self.head.weights.as_mut_slice()));
        out.push((ParamKind::DenseOffset, self.head.offsets.as_mut_slice()));
        out
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> WaweNet<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::of(x.f64())).collect::<Vec<U>>();
        WaweNet {
            config: self.config.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| Section {
                    spec: s.spec.clone(),
                    conv: ConvWeights {
                        in_channels: s.conv.in_channels,
                        out_channels: s.conv.out_channels,
                        weights: cv(&s.conv.weights),
                        offsets: cv(&s.conv.offsets),
                    },
                    norm: NormParams {
                        gamma: cv(&s.norm.gamma),
                        beta: cv(&s.norm.beta),
                        running_mean: cv(&s.norm.running_mean),
                        running_var: cv(&s.norm.running_var),
                        epsilon: s.norm.epsilon,
                        momentum: s.norm.momentum,
                    },
                })
                .collect(),
            head: DenseHead {
                inputs: self.head.inputs,
                outputs: self.head.outputs,
                weights: cv(&self.head.weights),
                offsets: cv(&self.head.offsets),
            },
            mode: self.mode,
        }
    }

    pub(crate) fn check_input(&self, x: &ChannelSignal<T>) -> Result<()> {
        if x.channels() != self.config.input_channels || x.len() != self.config.input_len {
            return Err(Error::InvalidShape(format!(
                "network input must be {} x {}, got {} x {}",
                self.config.input_channels,
                self.config.input_len,
                x.channels(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Inference with folded (running-statistics) normalization.
    pub fn forward(&self, x: &ChannelSignal<T>) -> Result<Inference<T>> {
        self.check_input(x)?;
        let mut section_lengths = Vec::with_capacity(self.sections.len());
        let mut cur = std::borrow::Cow::Borrowed(x);
        for s in &self.sections {
            let next = s.forward_eval(&cur);
            debug_assert_eq!(next.len(), s.spec.l_out, "section {} length", s.spec.index);
            section_lengths.push(next.len());
            cur = std::borrow::Cow::Owned(next);
        }
        let latent = cur.into_owned().into_vec();
        let estimates = dsp::dense_map(&latent, &self.head.weights, &self.head.offsets)?;
        Ok(Inference {
            estimates,
            latent,
            section_lengths,
        })
    }

    /// Replicates head rows to `outputs` estimates and the first-section
    /// kernels to `input_channels` inputs; everything else is copied.
    pub fn adapt(&self, outputs: usize, input_channels: usize) -> Result<Self> {
        let cfg = &self.config;
        if outputs < cfg.outputs || input_channels < cfg.input_channels {
            return Err(Error::InvalidConfig(format!(
                "cannot shrink ({} -> {outputs} outputs, {} -> {input_channels} inputs)",
                cfg.outputs, cfg.input_channels
            )));
        }
        let mut config = cfg.clone();
        config.outputs = outputs;
        config.input_channels = input_channels;
        config.validate()?;
        let mut net = self.clone();
        net.config = config;

        let c = cfg.channels;
        let (old_out, old_in) = (cfg.outputs, cfg.input_channels);
        let mut weights = Vec::with_capacity(outputs * c);
        let mut offsets = Vec::with_capacity(outputs);
        for o in 0..outputs {
            let src = o % old_out;
            weights.extend_from_slice(&self.head.weights[src * c..(src + 1) * c]);
            offsets.push(self.head.offsets[src]);
        }
        net.head = DenseHead {
            inputs: c,
            outputs,
            weights,
            offsets,
        };

        let first = &self.sections[0].conv;
        let mut w = Vec::with_capacity(c * input_channels * TAPS);
        for o in 0..c {
            for i in 0..input_channels {
                let src = (o * old_in + i % old_in) * TAPS;
                w.extend_from_slice(&first.weights[src..src + TAPS]);
            }
        }
        net.sections[0].conv = ConvWeights {
            in_channels: input_channels,
            out_channels: c,
            weights: w,
            offsets: first.offsets.clone(),
        };
        Ok(net)
    }

    /// Per-section geometry and parameter subtotals.
    pub fn describe(&self) -> ModelReport {
        let cfg = &self.config;
        let rows = self
            .sections
            .iter()
            .enumerate()
            .map(|(i, s)| SectionRow {
                index: s.spec.index,
                label: s.spec.label(),
                rate_hz: s.spec.rate_hz,
                l_in: s.spec.conv_len(),
                spacing_ms: s.spec.spacing_ms,
                l_out: s.spec.l_out,
                conv_params: cfg.conv_param_count(i),
                norm_params: cfg.norm_param_count(),
            })
            .collect();
        ModelReport {
            rows,
            head_inputs: self.head.inputs,
            head_outputs: self.head.outputs,
            head_params: cfg.head_param_count(),
            total: self.param_count(),
        }
    }
}

impl<T: Scalar> Section<T> {
    /// Pad, convolve, folded normalization, rectify, pool.
    pub fn forward_eval(&self, x: &ChannelSignal<T>) -> ChannelSignal<T> {
        let spec = &self.spec;
        let len = spec.conv_len();
        let padded = dsp::pad_for_conv(&x.pad_tail(spec.pad_after));
        let oc = self.conv.out_channels;
        let mut z = vec![T::zero(); oc * len];
        dsp::conv_padded(&self.conv, &padded, len, true, &mut z);
        let mut out = ChannelSignal::zeros(oc, spec.l_out);
        for (c, row) in z.chunks_exact_mut(len).enumerate() {
            let (a, b) = (self.norm.gain(c), self.norm.bias(c));
            for v in row.iter_mut() {
                let y = a * v.f64() + b;
                *v = if y > 0.0 { T::of(y) } else { T::zero() };
            }
            dsp::avg_pool_into(row, spec.pool, out.channel_mut(c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionRow {
    pub index: usize,
    pub label: String,
    pub rate_hz: f64,
    /// Samples per channel entering the convolution (after padding).
    pub l_in: usize,
    pub spacing_ms: f64,
    pub l_out: usize,
    pub conv_params: usize,
    pub norm_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub rows: Vec<SectionRow>,
    pub head_inputs: usize,
    pub head_outputs: usize,
    pub head_params: usize,
    pub total: usize,
}

impl ModelReport {
    pub fn norm_subtotal(&self) -> usize {
        self.rows.iter().map(|r| r.norm_params).sum()
    }

    pub fn conv_subtotal(&self) -> usize {
        self.rows.iter().map(|r| r.conv_params).sum()
    }
}

impl fmt::Display for ModelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<5} {:<12} {:>10} {:>7} {:>10} {:>7} {:>8} {:>6}",
            "S", "type", "rate_hz", "l_in", "spacing_ms", "l_out", "conv", "norm"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "S{:<4} {:<12} {:>10.2} {:>7} {:>10} {:>7} {:>8} {:>6}",
                r.index, r.label, r.rate_hz, r.l_in, r.spacing_ms, r.l_out, r.conv_params, r.norm_params
            )?;
        }
        writeln!(
            f,
            "S{:<4} {:<12} {:>10} {:>7} {:>10} {:>7} {:>8}",
            self.rows.len() + 1,
            "Dense",
            "-",
            self.head_inputs,
            "-",
            self.head_outputs,
            self.head_params
        )?;
        write!(f, "total parameters: {}", self.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::SectionKind;
    use rand::{Rng, SeedableRng};

    fn random_input(seed: u64, channels: usize, len: usize) -> ChannelSignal<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChannelSignal::new(channels, len, (0..channels * len).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn built_counts_match_closed_form() {
        for (ic, nt, expect) in [(1, 1, 335_905), (1, 11, 336_875), (2, 1, 336_193)] {
            let net = WaweNet::<f32>::build(ModelConfig::wawenet(ic, nt).unwrap(), 0).unwrap();
            assert_eq!(net.param_count(), expect);
            assert_eq!(net.config().param_count(), expect);
        }
    }

    #[test]
    fn build_is_deterministic_and_kaiming_scaled() {
        let cfg = ModelConfig::wawenet(1, 1).unwrap();
        let a = WaweNet::<f32>::build(cfg.clone(), 9).unwrap();
        let b = WaweNet::<f32>::build(cfg.clone(), 9).unwrap();
        let c = WaweNet::<f32>::build(cfg, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // second section: fan_in = 96 * 3
        let w = &a.sections[1].conv.weights;
        let var = w.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 288.0).abs() < 0.05 * 2.0 / 288.0, "variance {var}");
        assert!(a.sections.iter().all(|s| s.conv.offsets.iter().all(|&o| o == 0.0)));
        assert!(a.sections.iter().all(|s| s.norm.gamma.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn shape_trace_and_zero_input() {
        let mut net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 1).unwrap(), 1).unwrap();
        net.head.offsets[0] = 0.3;
        let zero = ChannelSignal::zeros(1, 48_000);
        let out = net.forward(&zero).unwrap();
        assert_eq!(
            out.section_lengths,
            vec![12000, 6000, 3000, 750, 375, 188, 94, 47, 24, 12, 6, 3, 1]
        );
        assert!(out.latent.iter().all(|&v| v == 0.0));
        assert_eq!(out.estimates, vec![0.3]);
        assert_eq!(out.latent.len(), 96);
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 1).unwrap(), 1).unwrap();
        assert!(matches!(net.forward(&ChannelSignal::zeros(1, 47_999)), Err(Error::InvalidShape(_))));
        assert!(matches!(net.forward(&ChannelSignal::zeros(2, 48_000)), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 2).unwrap(), 4).unwrap();
        let x = random_input(2, 1, 48_000);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimates.len(), 2);
    }

    #[test]
    fn dual_input_with_halved_weights_matches_single_input() {
        let net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 1).unwrap(), 5).unwrap();
        let mut dual = net.adapt(1, 2).unwrap();
        dual.sections[0].conv.weights.iter_mut().for_each(|w| *w *= 0.5);
        let x = random_input(6, 1, 48_000);
        let xx = ChannelSignal::from_channels(&[x.channel(0).to_vec(), x.channel(0).to_vec()]).unwrap();
        let a = net.forward(&x).unwrap();
        let b = dual.forward(&xx).unwrap();
        let dev = a
            .latent
            .iter()
            .chain(&a.estimates)
            .zip(b.latent.iter().chain(&b.estimates))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0f32, f32::max);
        assert!(dev <= 1e-5, "max deviation {dev}");
    }

    #[test]
    fn adapt_replicates_head_and_first_section() {
        let net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 1).unwrap(), 7).unwrap();
        let wide = net.adapt(7, 1).unwrap();
        assert_eq!(wide.head.weights.len(), 7 * 96);
        for row in wide.head.weights.chunks(96) {
            assert_eq!(row, &net.head.weights[..]);
        }
        let dual = net.adapt(1, 2).unwrap();
        let w = &dual.sections[0].conv.weights;
        for o in 0..96 {
            assert_eq!(w[o * 6..o * 6 + 3], w[o * 6 + 3..o * 6 + 6]);
            assert_eq!(w[o * 6..o * 6 + 3], net.sections[0].conv.weights[o * 3..o * 3 + 3]);
        }
        assert_eq!(dual.sections[1..], net.sections[1..]);
        assert_eq!(net.adapt(1, 1).unwrap(), net);
        assert!(matches!(wide.adapt(3, 1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn describe_rows() {
        let net = WaweNet::<f32>::build(ModelConfig::wawenet(1, 1).unwrap(), 0).unwrap();
        let r = net.describe();
        let s2 = &r.rows[1];
        assert_eq!((s2.rate_hz, s2.spacing_ms, s2.l_in, s2.l_out), (4000.0, 0.25, 12_000, 6_000));
        let s13 = &r.rows[12];
        assert_eq!((s13.label.as_str(), s13.l_in, s13.l_out), ("Conv A-3", 3, 1));
        assert_eq!(r.norm_subtotal(), 2_496);
        assert_eq!(r.conv_subtotal() + r.norm_subtotal() + r.head_params, r.total);
        assert_eq!(r.total, 335_905);
        assert!(r.to_string().contains("total parameters: 335905"));
    }

    #[test]
    fn custom_net_runs() {
        let cfg = ModelConfig::custom(1, 4, 2, 47, &[(SectionKind::PConvA, 4), (SectionKind::ConvA, 4), (SectionKind::ConvA, 3)]).unwrap();
        let net = WaweNet::<f64>::build(cfg, 3).unwrap();
        let x = ChannelSignal::new(1, 47, (0..47).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let out = net.forward(&x).unwrap();
        assert_eq!(out.section_lengths, vec![12, 3, 1]);
        assert_eq!(out.latent.len(), 4);
        assert_eq!(out.estimates.len(), 2);
    }
}
