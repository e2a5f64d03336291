//! Batched training-mode forward pass with retained activations, and its
//! reverse pass.
//!
//! Per item, per section the padded convolution input is kept. The
//! convolution output is kept too, except in sections with only a few input
//! channels, where it is cheap to recompute and is streamed row by row. Items are processed in parallel, but every
//! cross-item reduction runs in item order, so results do not depend on the
//! thread count.

use rayon::prelude::*;

use crate::dsp::{self, conv_padded, norm_train_input_grad, ChannelSignal, ConvWeights, Moments};
use crate::error::{Error, Result};
use crate::model::{Section, WaweNet};
use crate::scalar::Scalar;

/// Gradient tensors in [`WaweNet::param_tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros<T: Scalar>(net: &WaweNet<T>) -> Self {
        Self {
            tensors: net.param_tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flatten().copied()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub(crate) fn check_matches<T: Scalar>(&self, net: &WaweNet<T>) -> Result<()> {
        let tensors = net.param_tensors();
        if tensors.len() != self.tensors.len() || tensors.iter().zip(&self.tensors).any(|((_, t), g)| t.len() != g.len()) {
            return Err(Error::InvalidShape("gradient does not match the network's tensors".into()));
        }
        Ok(())
    }
}

struct SectionCache<T> {
    padded: Vec<Vec<T>>,
    z: Option<Vec<Vec<T>>>,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    count: usize,
}

/// Activations of one training-mode forward pass over a batch.
pub struct TrainGraph<T> {
    sections: Vec<SectionCache<T>>,
    latent: Vec<Vec<T>>,
    /// Per item, one estimate per output.
    pub estimates: Vec<Vec<f64>>,
}

fn pad_rows<T: Scalar>(x: &[T], channels: usize, len: usize, conv_len: usize) -> Vec<T> {
    let stride = conv_len + 2;
    let mut out = vec![T::zero(); channels * stride];
    for (dst, src) in out.chunks_exact_mut(stride).zip(x.chunks_exact(len)) {
        dst[1..=len].copy_from_slice(src);
    }
    out
}

fn conv_out<T: Scalar>(sec: &Section<T>, padded: &[T]) -> Vec<T> {
    let len = sec.spec.conv_len();
    let mut z = vec![T::zero(); sec.conv.out_channels * len];
    conv_padded(&sec.conv, padded, len, true, &mut z);
    z
}

/// Calls `f(channel, z_row)` for every convolution output row of one item,
/// from `z` when stored or recomputed one row at a time otherwise (a row
/// stays cache-resident, the full output would not).
fn for_rows<T: Scalar>(sec: &Section<T>, padded: &[T], z: Option<&[T]>, mut f: impl FnMut(usize, &[T])) {
    let len = sec.spec.conv_len();
    match z {
        Some(z) => z.chunks_exact(len).enumerate().for_each(|(c, row)| f(c, row)),
        None => {
            let mut row = vec![T::zero(); len];
            for c in 0..sec.conv.out_channels {
                dsp::conv_row(&sec.conv, padded, len, c, true, &mut row);
                f(c, &row);
            }
        }
    }
}

impl<T: Scalar> SectionCache<T> {
    fn z_item(&self, item: usize) -> Option<&[T]> {
        self.z.as_ref().map(|z| z[item].as_slice())
    }
}

fn section_forward<T: Scalar>(sec: &mut Section<T>, inputs: Vec<Vec<T>>) -> (SectionCache<T>, Vec<Vec<T>>) {
    let spec = sec.spec.clone();
    let (len, m, l_out) = (spec.conv_len(), spec.pool, spec.l_out);
    let (ic, oc) = (sec.conv.in_channels, sec.conv.out_channels);
    let keep_z = ic > dsp::DIRECT_CONV_MAX_INPUTS;
    let padded: Vec<Vec<T>> = inputs.par_iter().map(|x| pad_rows(x, ic, spec.l_in, len)).collect();
    drop(inputs);

    let sec_ref = &*sec;
    let (z, per_item): (Vec<Option<Vec<T>>>, Vec<Vec<Moments>>) = padded
        .par_iter()
        .map(|p| {
            let z = keep_z.then(|| conv_out(sec_ref, p));
            let mut moments = Vec::with_capacity(oc);
            for_rows(sec_ref, p, z.as_deref(), |_, row| moments.push(Moments::of(row)));
            (z, moments)
        })
        .unzip();
    let moments: Vec<Moments> = (0..oc)
        .map(|c| per_item.iter().map(|m| m[c]).fold(Moments::default(), Moments::merge))
        .collect();
    let stats = dsp::BatchNormCache::from_moments(&moments, sec.norm.epsilon);
    sec.norm.update_running(&moments);
    let cache = SectionCache {
        padded,
        z: keep_z.then(|| z.into_iter().map(|v| v.expect("kept")).collect()),
        mean: stats.mean,
        inv_std: stats.inv_std,
        count: stats.count,
    };

    let sec = &*sec;
    let cache_ref = &cache;
    let outputs = (0..cache.padded.len())
        .into_par_iter()
        .map(|item| {
            let mut out = vec![T::zero(); oc * l_out];
            for_rows(sec, &cache_ref.padded[item], cache_ref.z_item(item), |c, zrow| {
                let a = sec.norm.gamma[c].f64() * cache_ref.inv_std[c];
                let b = sec.norm.beta[c].f64() - a * cache_ref.mean[c];
                for (o, block) in out[c * l_out..(c + 1) * l_out].iter_mut().zip(zrow.chunks_exact(m)) {
                    let acc: f64 = block.iter().map(|v| (a * v.f64() + b).max(0.0)).sum();
                    *o = T::of(acc / m as f64);
                }
            });
            out
        })
        .collect();
    (cache, outputs)
}

fn section_backward<T: Scalar>(
    sec: &Section<T>,
    cache: &SectionCache<T>,
    grad_out: Vec<Vec<T>>,
    need_input: bool,
    grads: &mut [Vec<f64>],
) -> Vec<Vec<T>> {
    let spec = &sec.spec;
    let (len, m, l_out) = (spec.conv_len(), spec.pool, spec.l_out);
    let (ic, oc) = (sec.conv.in_channels, sec.conv.out_channels);
    let n = cache.count as f64;
    let inv_m = 1.0 / m as f64;
    let covered = l_out * m;
    // forward rectifier input is a·z + b; x̂ = (z − mean)·inv_std
    let affine = |c: usize| {
        let a = sec.norm.gamma[c].f64() * cache.inv_std[c];
        (a, sec.norm.beta[c].f64() - a * cache.mean[c], cache.mean[c], cache.inv_std[c])
    };

    // per item and channel: Σ dy and Σ dy·x̂, where dy is the gradient
    // reaching the rectifier input
    let sums: Vec<Vec<(f64, f64)>> = (0..grad_out.len())
        .into_par_iter()
        .map(|item| {
            let mut s = vec![(0.0, 0.0); oc];
            for_rows(sec, &cache.padded[item], cache.z_item(item), |c, zrow| {
                let (a, b, mean, inv) = affine(c);
                let grow = &grad_out[item][c * l_out..(c + 1) * l_out];
                let (mut sd, mut sdx) = (0.0, 0.0);
                for (block, g) in zrow[..covered].chunks_exact(m).zip(grow) {
                    let (mut cnt, mut sx) = (0.0, 0.0);
                    for v in block {
                        let v = v.f64();
                        if a * v + b > 0.0 {
                            cnt += 1.0;
                            sx += (v - mean) * inv;
                        }
                    }
                    let share = g.f64() * inv_m;
                    sd += share * cnt;
                    sdx += share * sx;
                }
                s[c] = (sd, sdx);
            });
            s
        })
        .collect();
    let mut sum_dy = vec![0.0; oc];
    let mut sum_dy_xhat = vec![0.0; oc];
    for s in &sums {
        for c in 0..oc {
            sum_dy[c] += s[c].0;
            sum_dy_xhat[c] += s[c].1;
        }
    }

    // gradient reaching the convolution output, one row
    let dz_row = |item: usize, c: usize, zrow: &[T], drow: &mut [T]| {
        let (a, b, mean, inv) = affine(c);
        let gi = sec.norm.gamma[c].f64() * inv;
        let (sd, sdx) = (sum_dy[c], sum_dy_xhat[c]);
        let grow = &grad_out[item][c * l_out..(c + 1) * l_out];
        for ((dblk, zblk), g) in drow[..covered]
            .chunks_exact_mut(m)
            .zip(zrow.chunks_exact(m))
            .zip(grow)
        {
            let share = g.f64() * inv_m;
            for (d, v) in dblk.iter_mut().zip(zblk) {
                let v = v.f64();
                let dy = if a * v + b > 0.0 { share } else { 0.0 };
                *d = T::of(norm_train_input_grad(dy, (v - mean) * inv, gi, n, sd, sdx));
            }
        }
        for (d, v) in drow[covered..].iter_mut().zip(&zrow[covered..]) {
            *d = T::of(norm_train_input_grad(0.0, (v.f64() - mean) * inv, gi, n, sd, sdx));
        }
    };

    let per_item: Vec<(ConvWeights<T>, Vec<T>)> = (0..grad_out.len())
        .into_par_iter()
        .map(|item| {
            let padded = &cache.padded[item];
            let mut dw = ConvWeights::zeros(ic, oc);
            let mut gpad = if need_input { vec![T::zero(); ic * (len + 2)] } else { Vec::new() };
            match cache.z_item(item) {
                Some(z) => {
                    let mut dz = vec![T::zero(); oc * len];
                    for (c, (zrow, drow)) in z.chunks_exact(len).zip(dz.chunks_exact_mut(len)).enumerate() {
                        dz_row(item, c, zrow, drow);
                    }
                    let gp = need_input.then_some(gpad.as_mut_slice());
                    dsp::conv_backward_padded(&sec.conv, padded, len, &dz, &mut dw, gp);
                }
                None => {
                    let mut drow = vec![T::zero(); len];
                    for_rows(sec, padded, None, |c, zrow| {
                        dz_row(item, c, zrow, &mut drow);
                        let gp = need_input.then_some(gpad.as_mut_slice());
                        dsp::conv_backward_row(&sec.conv, padded, len, c, &drow, &mut dw, gp);
                    });
                }
            }
            let grad_in = gpad
                .chunks_exact(len + 2)
                .flat_map(|row| row[1..=spec.l_in].iter().copied())
                .collect();
            (dw, grad_in)
        })
        .collect();

    let (gw, rest) = grads.split_at_mut(1);
    let (goff, rest) = rest.split_at_mut(1);
    let (ggamma, gbeta) = rest.split_at_mut(1);
    let mut inputs = Vec::with_capacity(per_item.len());
    for (dw, gi) in per_item {
        for (a, b) in gw[0].iter_mut().zip(&dw.weights) {
            *a += b.f64();
        }
        for (a, b) in goff[0].iter_mut().zip(&dw.offsets) {
            *a += b.f64();
        }
        inputs.push(gi);
    }
    for c in 0..oc {
        ggamma[0][c] += sum_dy_xhat[c];
        gbeta[0][c] += sum_dy[c];
    }
    inputs
}

impl<T: Scalar> TrainGraph<T> {
    /// Forward pass with batch statistics. Updates the running statistics of
    /// every normalization stage.
    pub fn forward(net: &mut WaweNet<T>, inputs: &[ChannelSignal<T>]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidShape("empty batch".into()));
        }
        for x in inputs {
            net.check_input(x)?;
        }
        let last_len = net.sections.last().map(|s| s.spec.conv_len()).unwrap_or(0);
        if inputs.len() * last_len < 2 {
            return Err(Error::InvalidShape(
                "training-mode normalization needs at least two values per channel".into(),
            ));
        }
        let mut cur: Vec<Vec<T>> = inputs.iter().map(|x| x.as_slice().to_vec()).collect();
        let mut sections = Vec::with_capacity(net.sections.len());
        for sec in &mut net.sections {
            let (cache, out) = section_forward(sec, cur);
            sections.push(cache);
            cur = out;
        }
        let latent = cur;
        let estimates = latent
            .iter()
            .map(|v| dsp::dense_map(v, &net.head.weights, &net.head.offsets).map(|e| e.iter().map(|x| x.f64()).collect()))
            .collect::<Result<_>>()?;
        Ok(Self {
            sections,
            latent,
            estimates,
        })
    }

    pub fn batch_len(&self) -> usize {
        self.latent.len()
    }

    /// Reverse pass for `grad_estimates` (per item, per output). `net` must be
    /// the network this graph was recorded from.
    pub fn backward(&self, net: &WaweNet<T>, grad_estimates: &[Vec<f64>]) -> Result<Gradient> {
        let outputs = net.head.outputs;
        if grad_estimates.len() != self.latent.len() || grad_estimates.iter().any(|g| g.len() != outputs) {
            return Err(Error::InvalidShape("estimate gradient does not match the batch".into()));
        }
        if self.sections.len() != net.sections.len() {
            return Err(Error::StateError("graph was recorded from a different network".into()));
        }
        let mut grad = Gradient::zeros(net);
        let head_w = 4 * net.sections.len();
        let c = net.head.inputs;
        let mut grad_out = Vec::with_capacity(self.latent.len());
        for (v, g) in self.latent.iter().zip(grad_estimates) {
            for (o, &go) in g.iter().enumerate() {
                for (i, x) in v.iter().enumerate() {
                    grad.tensors[head_w][o * c + i] += go * x.f64();
                }
                grad.tensors[head_w + 1][o] += go;
            }
            let dv: Vec<T> = (0..c)
                .map(|i| T::of((0..outputs).map(|o| net.head.weights[o * c + i].f64() * g[o]).sum()))
                .collect();
            grad_out.push(dv);
        }
        for (s, (sec, cache)) in net.sections.iter().zip(&self.sections).enumerate().rev() {
            grad_out = section_backward(sec, cache, grad_out, s > 0, &mut grad.tensors[4 * s..4 * s + 4]);
        }
        Ok(grad)
    }
}

/// Loss and gradient of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    /// `mse + penalty`.
    pub loss: f64,
    /// Squared error averaged over items and outputs.
    pub mse: f64,
    pub penalty: f64,
    pub gradient: Gradient,
    pub estimates: Vec<Vec<f64>>,
}

/// `l2 · Σ w²` over convolution and dense weights.
pub fn l2_penalty<T: Scalar>(net: &WaweNet<T>, l2: f64) -> f64 {
    net.param_tensors()
        .iter()
        .filter(|(k, _)| k.is_penalized())
        .map(|(_, t)| t.iter().map(|w| w.f64() * w.f64()).sum::<f64>())
        .sum::<f64>()
        * l2
}

/// Mean squared error over the batch and outputs plus the weight penalty,
/// with the gradient of both.
pub fn loss_and_grad<T: Scalar>(
    net: &mut WaweNet<T>,
    inputs: &[ChannelSignal<T>],
    targets: &[Vec<f64>],
    l2: f64,
) -> Result<LossGrad> {
    let outputs = net.head.outputs;
    if targets.len() != inputs.len() {
        return Err(Error::InvalidShape(format!(
            "{} inputs but {} target vectors",
            inputs.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|t| t.len() != outputs) {
        return Err(Error::InvalidShape(format!("every target vector needs {outputs} values")));
    }
    if targets.iter().flatten().any(|t| !t.is_finite()) {
        return Err(Error::InvalidShape("targets must be finite".into()));
    }
    let graph = TrainGraph::forward(net, inputs)?;
    let scale = 1.0 / (inputs.len() * outputs) as f64;
    let mut mse = 0.0;
    let grad_est: Vec<Vec<f64>> = graph
        .estimates
        .iter()
        .zip(targets)
        .map(|(e, t)| {
            e.iter()
                .zip(t)
                .map(|(e, t)| {
                    mse += (e - t) * (e - t);
                    2.0 * (e - t) * scale
                })
                .collect()
        })
        .collect();
    mse *= scale;
    let mut gradient = graph.backward(net, &grad_est)?;
    let penalty = l2_penalty(net, l2);
    for ((kind, w), g) in net.param_tensors().iter().zip(&mut gradient.tensors) {
        if kind.is_penalized() {
            for (g, w) in g.iter_mut().zip(w.iter()) {
                *g += 2.0 * l2 * w.f64();
            }
        }
    }
    Ok(LossGrad {
        loss: mse + penalty,
        mse,
        penalty,
        gradient,
        estimates: graph.estimates,
    })
}
