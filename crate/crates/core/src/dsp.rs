//! Signal-processing primitives that every network section is built from:
//! three-tap FIR filtering, gain, bias, half-wave rectification, average
//! pooling (and its conventional filter + sub-sample form), the dense map and
//! batch normalization, each with its adjoint.
//!
//! Reductions (means, variances, tap sums) accumulate in `f64` regardless of
//! the storage type.

use crate::error::{Error, Result};
use crate::scalar::{gemm, mean64, sum64, sum_sq_dev64, MatMut, MatRef, Scalar};

/// Number of taps in every convolution kernel.
pub const TAPS: usize = 3;

/// Multi-channel signal stored channel-major: `data[c * len + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignal<T> {
    channels: usize,
    len: usize,
    data: Vec<T>,
}

impl<T: Scalar> ChannelSignal<T> {
    pub fn new(channels: usize, len: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidShape("channel count must be positive".into()));
        }
        if len == 0 {
            return Err(Error::InvalidLength("signal length must be positive".into()));
        }
        if data.len() != channels * len {
            return Err(Error::InvalidShape(format!(
                "expected {} values for {channels} x {len}, got {}",
                channels * len,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidShape("signal contains non-finite values".into()));
        }
        Ok(Self { channels, len, data })
    }

    pub fn zeros(channels: usize, len: usize) -> Self {
        Self {
            channels,
            len,
            data: vec![T::zero(); channels * len],
        }
    }

    pub fn mono(samples: Vec<T>) -> Result<Self> {
        let len = samples.len();
        Self::new(1, len, samples)
    }

    pub fn from_channels(channels: &[Vec<T>]) -> Result<Self> {
        let len = channels.first().map(Vec::len).unwrap_or(0);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidShape("channels differ in length".into()));
        }
        Self::new(channels.len(), len, channels.concat())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let len = self.len;
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn iter_channels(&self) -> std::slice::Chunks<'_, T> {
        self.data.chunks(self.len)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Per-channel arithmetic mean (the DC value of each channel).
    pub fn channel_means(&self) -> Vec<f64> {
        self.iter_channels().map(mean64).collect()
    }

    /// Applies `f` to every channel, producing a signal of a new length.
    pub fn map_channels(&self, new_len: usize, mut f: impl FnMut(&[T], &mut [T])) -> Self {
        let mut out = Self::zeros(self.channels, new_len);
        for c in 0..self.channels {
            f(self.channel(c), out.channel_mut(c));
        }
        out
    }

    /// Appends `extra` zeros to the end of every channel.
    pub fn pad_tail(&self, extra: usize) -> Self {
        if extra == 0 {
            return self.clone();
        }
        self.map_channels(self.len + extra, |src, dst| dst[..src.len()].copy_from_slice(src))
    }
}

/// Three-tap kernel plus additive offset. The output at `k` is
/// `h0·x[k−1] + h1·x[k] + h2·x[k+1] + offset` with zeros outside the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterKernel<T> {
    pub taps: [T; TAPS],
    pub offset: T,
}

impl<T: Scalar> FilterKernel<T> {
    pub fn new(h0: T, h1: T, h2: T, offset: T) -> Self {
        Self {
            taps: [h0, h1, h2],
            offset,
        }
    }

    pub fn without_offset(taps: [T; TAPS]) -> Self {
        Self {
            taps,
            offset: T::zero(),
        }
    }
}

#[inline]
fn tap_sum<T: Scalar>(x: &[T], taps: &[T; TAPS], k: usize) -> f64 {
    let n = x.len();
    let mut acc = taps[1].f64() * x[k].f64();
    if k > 0 {
        acc += taps[0].f64() * x[k - 1].f64();
    }
    if k + 1 < n {
        acc += taps[2].f64() * x[k + 1].f64();
    }
    acc
}

/// Centered three-tap filtering with one zero of padding at each end.
pub fn fir_filter<T: Scalar>(x: &[T], kernel: &FilterKernel<T>) -> Result<Vec<T>> {
    if x.is_empty() {
        return Err(Error::InvalidLength("fir_filter needs at least one sample".into()));
    }
    let off = kernel.offset.f64();
    Ok((0..x.len()).map(|k| T::of(tap_sum(x, &kernel.taps, k) + off)).collect())
}

/// Adjoint of [`fir_filter`]: returns the input gradient and the kernel
/// gradient (taps and offset).
pub fn fir_filter_backward<T: Scalar>(
    x: &[T],
    kernel: &FilterKernel<T>,
    grad_y: &[T],
) -> Result<(Vec<T>, FilterKernel<T>)> {
    if x.is_empty() {
        return Err(Error::InvalidLength("fir_filter needs at least one sample".into()));
    }
    if grad_y.len() != x.len() {
        return Err(Error::InvalidShape("gradient length differs from input".into()));
    }
    let n = x.len();
    // input gradient is the filter applied with reversed taps
    let reversed = [kernel.taps[2], kernel.taps[1], kernel.taps[0]];
    let grad_x = (0..n).map(|k| T::of(tap_sum(grad_y, &reversed, k))).collect();
    let mut g = [0.0f64; TAPS];
    let mut g_off = 0.0;
    for k in 0..n {
        let gy = grad_y[k].f64();
        g_off += gy;
        if k > 0 {
            g[0] += gy * x[k - 1].f64();
        }
        g[1] += gy * x[k].f64();
        if k + 1 < n {
            g[2] += gy * x[k + 1].f64();
        }
    }
    Ok((
        grad_x,
        FilterKernel::new(T::of(g[0]), T::of(g[1]), T::of(g[2]), T::of(g_off)),
    ))
}

/// `y = a·x + b` elementwise.
pub fn apply_gain_bias<T: Scalar>(x: &[T], a: T, b: T) -> Vec<T> {
    x.iter().map(|&v| a * v + b).collect()
}

/// Adjoint of [`apply_gain_bias`]: `(grad_x, grad_a, grad_b)`.
pub fn gain_bias_backward<T: Scalar>(x: &[T], a: T, grad_y: &[T]) -> Result<(Vec<T>, T, T)> {
    if grad_y.len() != x.len() {
        return Err(Error::InvalidShape("gradient length differs from input".into()));
    }
    let grad_x = grad_y.iter().map(|&g| a * g).collect();
    let grad_a = x.iter().zip(grad_y).map(|(&v, &g)| v.f64() * g.f64()).sum::<f64>();
    let grad_b = grad_y.iter().map(|g| g.f64()).sum::<f64>();
    Ok((grad_x, T::of(grad_a), T::of(grad_b)))
}

/// Half-wave rectification, `max(x, 0)`.
pub fn hwr<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

/// Adjoint of [`hwr`]. The subgradient at exactly zero is taken as zero.
pub fn hwr_backward<T: Scalar>(x: &[T], grad_y: &[T]) -> Result<Vec<T>> {
    if grad_y.len() != x.len() {
        return Err(Error::InvalidShape("gradient length differs from input".into()));
    }
    Ok(x
        .iter()
        .zip(grad_y)
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect())
}

pub(crate) fn check_pool(len: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidConfig("pooling factor must be positive".into()));
    }
    if len == 0 || len % m != 0 {
        return Err(Error::InvalidLength(format!(
            "length {len} is not a positive multiple of pooling factor {m}"
        )));
    }
    Ok(())
}

#[inline]
fn block_mean<T: Scalar>(block: &[T]) -> T {
    let mut acc = 0.0f64;
    for v in block {
        acc += v.f64();
    }
    T::of(acc / block.len() as f64)
}

/// Average pooling: non-overlapping block means starting at index 0.
pub fn avg_pool<T: Scalar>(x: &[T], m: usize) -> Result<Vec<T>> {
    check_pool(x.len(), m)?;
    Ok(x.chunks_exact(m).map(block_mean).collect())
}

pub(crate) fn avg_pool_into<T: Scalar>(x: &[T], m: usize, out: &mut [T]) {
    for (o, block) in out.iter_mut().zip(x.chunks_exact(m)) {
        *o = block_mean(block);
    }
}

/// Adjoint of [`avg_pool`]: each block member receives `grad/m`.
pub fn avg_pool_backward<T: Scalar>(grad_y: &[T], m: usize) -> Result<Vec<T>> {
    if m == 0 {
        return Err(Error::InvalidConfig("pooling factor must be positive".into()));
    }
    let mut out = vec![T::zero(); grad_y.len() * m];
    avg_pool_backward_into(grad_y, m, &mut out);
    Ok(out)
}

pub(crate) fn avg_pool_backward_into<T: Scalar>(grad_y: &[T], m: usize, out: &mut [T]) {
    let inv = T::of(1.0 / m as f64);
    for (g, block) in grad_y.iter().zip(out.chunks_exact_mut(m)) {
        let share = *g * inv;
        block.iter_mut().for_each(|v| *v = share);
    }
}

/// Length-`m` moving average with all coefficients `1/m`, evaluated at every
/// sample. Indices before the start wrap around to the end of the signal, so
/// the mean of the output equals the mean of the input.
pub fn pool_filter<T: Scalar>(x: &[T], m: usize) -> Result<Vec<T>> {
    if m == 0 {
        return Err(Error::InvalidConfig("pooling factor must be positive".into()));
    }
    if x.is_empty() {
        return Err(Error::InvalidLength("pool_filter needs at least one sample".into()));
    }
    let n = x.len();
    Ok((0..n)
        .map(|k| {
            let mut acc = 0.0f64;
            // ascending sample order, matching `avg_pool`
            for i in (0..m).rev() {
                acc += x[(k + n * m - i) % n].f64();
            }
            T::of(acc / m as f64)
        })
        .collect())
}

/// Keeps samples `phase, phase + m, phase + 2m, …`.
pub fn subsample<T: Scalar>(x: &[T], m: usize, phase: usize) -> Result<Vec<T>> {
    if m == 0 || phase >= m {
        return Err(Error::InvalidConfig(format!("invalid sub-sampling factor {m} / phase {phase}")));
    }
    Ok(x.iter().skip(phase).step_by(m).copied().collect())
}

/// `y = W·v + c` with `W` stored row-major as `outputs × v.len()`.
pub fn dense_map<T: Scalar>(v: &[T], weights: &[T], offsets: &[T]) -> Result<Vec<T>> {
    let outputs = offsets.len();
    if outputs == 0 || weights.len() != outputs * v.len() {
        return Err(Error::InvalidShape(format!(
            "dense map: {} weights for {} outputs x {} inputs",
            weights.len(),
            outputs,
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidShape("dense map input is not finite".into()));
    }
    Ok(weights
        .chunks_exact(v.len())
        .zip(offsets)
        .map(|(row, &c)| {
            let dot: f64 = row.iter().zip(v).map(|(w, x)| w.f64() * x.f64()).sum();
            T::of(dot + c.f64())
        })
        .collect())
}

/// Gradients of [`dense_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad<T> {
    pub input: Vec<T>,
    pub weights: Vec<T>,
    pub offsets: Vec<T>,
}

pub fn dense_backward<T: Scalar>(v: &[T], weights: &[T], grad_y: &[T]) -> Result<DenseGrad<T>> {
    let outputs = grad_y.len();
    if outputs == 0 || weights.len() != outputs * v.len() {
        return Err(Error::InvalidShape("dense backward: shape mismatch".into()));
    }
    let n = v.len();
    let input = (0..n)
        .map(|i| {
            let acc: f64 = (0..outputs).map(|o| weights[o * n + i].f64() * grad_y[o].f64()).sum();
            T::of(acc)
        })
        .collect();
    let mut w = Vec::with_capacity(weights.len());
    for g in grad_y {
        w.extend(v.iter().map(|&x| *g * x));
    }
    Ok(DenseGrad {
        input,
        weights: w,
        offsets: grad_y.to_vec(),
    })
}

/// Default normalization epsilon.
pub const BN_EPSILON: f64 = 1e-5;
/// Default running-statistics momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch-normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Scalar> NormParams<T> {
    /// Identity-initialized parameters: `gamma = 1`, `beta = 0`, running
    /// statistics `(0, 1)`.
    pub fn identity(channels: usize, epsilon: f64, momentum: f64) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folded gain for channel `c`: `gamma / sqrt(var + eps)`.
    pub fn gain(&self, c: usize) -> f64 {
        self.gamma[c].f64() / (self.running_var[c].f64() + self.epsilon).sqrt()
    }

    /// Folded bias for channel `c`: `beta − gain · mean`.
    pub fn bias(&self, c: usize) -> f64 {
        self.beta[c].f64() - self.gain(c) * self.running_mean[c].f64()
    }

    /// Folded `(gain, bias)` vectors.
    pub fn fold(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.channels()).map(|c| (self.gain(c), self.bias(c))).unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running count, mean and sum of squared deviations, mergeable across
/// batch items in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn of<T: Scalar>(x: &[T]) -> Self {
        if x.is_empty() {
            return Self::default();
        }
        let mean = mean64(x);
        let m2 = sum_sq_dev64(x, mean);
        Self {
            count: x.len(),
            mean,
            m2,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + delta * other.count as f64 / n,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * other.count as f64 / n,
        }
    }

    /// Biased (population) variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn unbiased_variance(&self) -> f64 {
        if self.count < 2 {
            self.variance()
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

/// Batch statistics retained by a training-mode normalization pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub count: usize,
}

impl BatchNormCache {
    pub fn from_moments(moments: &[Moments], epsilon: f64) -> Self {
        Self {
            mean: moments.iter().map(|m| m.mean).collect(),
            inv_std: moments.iter().map(|m| 1.0 / (m.variance() + epsilon).sqrt()).collect(),
            count: moments.first().map(|m| m.count).unwrap_or(0),
        }
    }
}

impl<T: Scalar> NormParams<T> {
    /// Exponential-moving-average update of the running statistics.
    pub fn update_running(&mut self, moments: &[Moments]) {
        let mom = self.momentum;
        for (c, m) in moments.iter().enumerate() {
            let rm = (1.0 - mom) * self.running_mean[c].f64() + mom * m.mean;
            let rv = (1.0 - mom) * self.running_var[c].f64() + mom * m.unbiased_variance();
            self.running_mean[c] = T::of(rm);
            self.running_var[c] = T::of(rv);
        }
    }
}

fn check_batch<T: Scalar>(batch: &[ChannelSignal<T>], channels: usize) -> Result<usize> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidShape("batch is empty".into()))?;
    let len = first.len();
    for s in batch {
        if s.channels() != channels || s.len() != len {
            return Err(Error::InvalidShape(format!(
                "batch items must be {channels} x {len}, found {} x {}",
                s.channels(),
                s.len()
            )));
        }
    }
    Ok(len)
}

/// Batch normalization over a batch of equally-shaped signals.
///
/// Training mode normalizes each channel by its statistics over batch and
/// time, applies `gamma`/`beta`, updates the running statistics and returns
/// the statistics needed by [`batch_norm_backward`]. Evaluation mode applies
/// the folded gain and bias.
pub fn batch_norm<T: Scalar>(
    batch: &[ChannelSignal<T>],
    params: &mut NormParams<T>,
    mode: NormMode,
) -> Result<(Vec<ChannelSignal<T>>, Option<BatchNormCache>)> {
    let channels = params.channels();
    let len = check_batch(batch, channels)?;
    match mode {
        NormMode::Eval => {
            let (a, b) = params.fold();
            let out = batch
                .iter()
                .map(|s| {
                    let mut o = ChannelSignal::zeros(channels, len);
                    for c in 0..channels {
                        for (d, &v) in o.channel_mut(c).iter_mut().zip(s.channel(c)) {
                            *d = T::of(a[c] * v.f64() + b[c]);
                        }
                    }
                    o
                })
                .collect();
            Ok((out, None))
        }
        NormMode::Train => {
            if batch.len() * len < 2 {
                return Err(Error::InvalidShape(
                    "training-mode normalization needs at least two values per channel".into(),
                ));
            }
            let moments: Vec<Moments> = (0..channels)
                .map(|c| {
                    batch
                        .iter()
                        .map(|s| Moments::of(s.channel(c)))
                        .fold(Moments::default(), Moments::merge)
                })
                .collect();
            let cache = BatchNormCache::from_moments(&moments, params.epsilon);
            let out = batch
                .iter()
                .map(|s| {
                    let mut o = ChannelSignal::zeros(channels, len);
                    for c in 0..channels {
                        let (g, bt) = (params.gamma[c].f64(), params.beta[c].f64());
                        for (d, &v) in o.channel_mut(c).iter_mut().zip(s.channel(c)) {
                            let xhat = (v.f64() - cache.mean[c]) * cache.inv_std[c];
                            *d = T::of(g * xhat + bt);
                        }
                    }
                    o
                })
                .collect();
            params.update_running(&moments);
            Ok((out, Some(cache)))
        }
    }
}

/// Gradients of [`batch_norm`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad<T> {
    pub input: Vec<ChannelSignal<T>>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-channel input gradient of training-mode normalization, given the
/// batch-wide sums `Σ dy` and `Σ dy·x̂` for that channel.
#[inline]
pub(crate) fn norm_train_input_grad(
    dy: f64,
    xhat: f64,
    gamma_inv_std: f64,
    count: f64,
    sum_dy: f64,
    sum_dy_xhat: f64,
) -> f64 {
    gamma_inv_std * (dy - sum_dy / count - xhat * sum_dy_xhat / count)
}

/// Adjoint of [`batch_norm`]. Training mode needs the cache returned by the
/// forward pass; a missing cache is a [`Error::StateError`].
pub fn batch_norm_backward<T: Scalar>(
    batch: &[ChannelSignal<T>],
    params: &NormParams<T>,
    mode: NormMode,
    cache: Option<&BatchNormCache>,
    grad_y: &[ChannelSignal<T>],
) -> Result<NormGrad<T>> {
    let channels = params.channels();
    let len = check_batch(batch, channels)?;
    if grad_y.len() != batch.len() || check_batch(grad_y, channels)? != len {
        return Err(Error::InvalidShape("gradient batch differs from input batch".into()));
    }
    let mut gamma = vec![0.0; channels];
    let mut beta = vec![0.0; channels];
    let mut input: Vec<ChannelSignal<T>> = batch.iter().map(|_| ChannelSignal::zeros(channels, len)).collect();
    match mode {
        NormMode::Eval => {
            for c in 0..channels {
                let var = params.running_var[c].f64() + params.epsilon;
                let inv_std = 1.0 / var.sqrt();
                let a = params.gamma[c].f64() * inv_std;
                for (i, (x, g)) in batch.iter().zip(grad_y).enumerate() {
                    for ((d, &v), &gy) in input[i].channel_mut(c).iter_mut().zip(x.channel(c)).zip(g.channel(c)) {
                        let gy = gy.f64();
                        *d = T::of(a * gy);
                        let xhat = (v.f64() - params.running_mean[c].f64()) * inv_std;
                        gamma[c] += gy * xhat;
                        beta[c] += gy;
                    }
                }
            }
        }
        NormMode::Train => {
            let cache = cache.ok_or_else(|| {
                Error::StateError("training-mode normalization backward needs the forward cache".into())
            })?;
            let count = (batch.len() * len) as f64;
            for c in 0..channels {
                let (mean, inv_std) = (cache.mean[c], cache.inv_std[c]);
                for (x, g) in batch.iter().zip(grad_y) {
                    for (&v, &gy) in x.channel(c).iter().zip(g.channel(c)) {
                        let xhat = (v.f64() - mean) * inv_std;
                        gamma[c] += gy.f64() * xhat;
                        beta[c] += gy.f64();
                    }
                }
                let gi = params.gamma[c].f64() * inv_std;
                for (i, (x, g)) in batch.iter().zip(grad_y).enumerate() {
                    for ((d, &v), &gy) in input[i].channel_mut(c).iter_mut().zip(x.channel(c)).zip(g.channel(c)) {
                        let xhat = (v.f64() - mean) * inv_std;
                        *d = T::of(norm_train_input_grad(gy.f64(), xhat, gi, count, beta[c], gamma[c]));
                    }
                }
            }
        }
    }
    Ok(NormGrad { input, gamma, beta })
}

/// Multi-channel convolution weights: `weights[(o * in_ch + i) * 3 + tap]`
/// and one offset per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<T>,
    pub offsets: Vec<T>,
}

impl<T: Scalar> ConvWeights<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![T::zero(); in_channels * out_channels * TAPS],
            offsets: vec![T::zero(); out_channels],
        }
    }

    pub fn kernel(&self, out: usize, input: usize) -> FilterKernel<T> {
        let base = (out * self.in_channels + input) * TAPS;
        FilterKernel::without_offset([self.weights[base], self.weights[base + 1], self.weights[base + 2]])
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.offsets.len()
    }
}

/// Copies `x` into a buffer with one zero column on each side, the layout
/// consumed by [`conv_padded`] and [`conv_backward_padded`].
pub fn pad_for_conv<T: Scalar>(x: &ChannelSignal<T>) -> Vec<T> {
    let (ch, len) = (x.channels(), x.len());
    let mut out = vec![T::zero(); ch * (len + 2)];
    for c in 0..ch {
        out[c * (len + 2) + 1..c * (len + 2) + 1 + len].copy_from_slice(x.channel(c));
    }
    out
}

pub(crate) const DIRECT_CONV_MAX_INPUTS: usize = 4;

/// Multi-channel convolution over a conv-padded input (`in_ch × (len + 2)`),
/// writing `out_ch × len` into `out`. With `with_offsets == false` the
/// per-channel offsets are left out.
pub fn conv_padded<T: Scalar>(w: &ConvWeights<T>, padded: &[T], len: usize, with_offsets: bool, out: &mut [T]) {
    let (ic, oc) = (w.in_channels, w.out_channels);
    debug_assert_eq!(padded.len(), ic * (len + 2));
    debug_assert_eq!(out.len(), oc * len);
    if ic <= DIRECT_CONV_MAX_INPUTS {
        // a matrix product with an inner dimension this small is dominated
        // by packing; plain shifted multiply-adds are faster
        for (o, row) in out.chunks_exact_mut(len).enumerate() {
            conv_row(w, padded, len, o, with_offsets, row);
        }
        return;
    }
    for (o, row) in out.chunks_exact_mut(len).enumerate() {
        let v = if with_offsets { w.offsets[o] } else { T::zero() };
        row.iter_mut().for_each(|x| *x = v);
    }
    for tap in 0..TAPS {
        gemm(
            oc,
            ic,
            len,
            MatRef::new(&w.weights, tap, ic * TAPS, TAPS),
            MatRef::new(padded, tap, len + 2, 1),
            T::one(),
            MatMut::new(out, 0, len, 1),
        );
    }
}

/// Multi-channel convolution: every output channel is the sum over input
/// channels of [`fir_filter`] outputs, plus that channel's offset.
pub fn conv<T: Scalar>(w: &ConvWeights<T>, x: &ChannelSignal<T>) -> Result<ChannelSignal<T>> {
    if x.channels() != w.in_channels {
        return Err(Error::InvalidShape(format!(
            "conv expects {} input channels, got {}",
            w.in_channels,
            x.channels()
        )));
    }
    let len = x.len();
    let padded = pad_for_conv(x);
    let mut out = ChannelSignal::zeros(w.out_channels, len);
    conv_padded(w, &padded, len, true, out.as_mut_slice());
    Ok(out)
}

/// Accumulates the weight and offset gradients of [`conv_padded`] into
/// `grad` (`beta = 1` semantics are left to the caller by zeroing first) and,
/// when `grad_padded` is given, writes the gradient with respect to the
/// padded input.
pub fn conv_backward_padded<T: Scalar>(
    w: &ConvWeights<T>,
    padded: &[T],
    len: usize,
    grad_y: &[T],
    grad: &mut ConvWeights<T>,
    grad_padded: Option<&mut [T]>,
) {
    let (ic, oc) = (w.in_channels, w.out_channels);
    if ic <= DIRECT_CONV_MAX_INPUTS {
        conv_backward_direct(w, padded, len, grad_y, grad, grad_padded);
        return;
    }
    for tap in 0..TAPS {
        gemm(
            oc,
            len,
            ic,
            MatRef::new(grad_y, 0, len, 1),
            MatRef::new(padded, tap, 1, len + 2),
            T::one(),
            MatMut::new(&mut grad.weights, tap, ic * TAPS, TAPS),
        );
    }
    for (o, row) in grad_y.chunks_exact(len).enumerate() {
        grad.offsets[o] = T::of(grad.offsets[o].f64() + row.iter().map(|v| v.f64()).sum::<f64>());
    }
    if let Some(gp) = grad_padded {
        gp.iter_mut().for_each(|v| *v = T::zero());
        for tap in 0..TAPS {
            gemm(
                ic,
                oc,
                len,
                MatRef::new(&w.weights, tap, TAPS, ic * TAPS),
                MatRef::new(grad_y, 0, len, 1),
                T::one(),
                MatMut::new(gp, tap, len + 2, 1),
            );
        }
    }
}

fn conv_backward_direct<T: Scalar>(
    w: &ConvWeights<T>,
    padded: &[T],
    len: usize,
    grad_y: &[T],
    grad: &mut ConvWeights<T>,
    mut grad_padded: Option<&mut [T]>,
) {
    if let Some(gp) = grad_padded.as_deref_mut() {
        gp.iter_mut().for_each(|v| *v = T::zero());
    }
    for (o, gy) in grad_y.chunks_exact(len).enumerate() {
        conv_backward_row(w, padded, len, o, gy, grad, grad_padded.as_deref_mut());
    }
}

/// Output channel `o` of [`conv_padded`], computed without matrix products.
pub(crate) fn conv_row<T: Scalar>(w: &ConvWeights<T>, padded: &[T], len: usize, o: usize, with_offset: bool, row: &mut [T]) {
    let ic = w.in_channels;
    row.fill(if with_offset { w.offsets[o] } else { T::zero() });
    for (i, src) in padded.chunks_exact(len + 2).enumerate() {
        let k = &w.weights[(o * ic + i) * TAPS..][..TAPS];
        let (x0, x1, x2) = (&src[..len], &src[1..=len], &src[2..len + 2]);
        for (((y, &a), &b), &c) in row.iter_mut().zip(x0).zip(x1).zip(x2) {
            *y += k[0] * a + k[1] * b + k[2] * c;
        }
    }
}

/// Adds output channel `o`'s contribution to the weight, offset and (when
/// given) padded-input gradients of [`conv_padded`].
pub(crate) fn conv_backward_row<T: Scalar>(
    w: &ConvWeights<T>,
    padded: &[T],
    len: usize,
    o: usize,
    gy: &[T],
    grad: &mut ConvWeights<T>,
    grad_padded: Option<&mut [T]>,
) {
    let ic = w.in_channels;
    for (i, src) in padded.chunks_exact(len + 2).enumerate() {
        for tap in 0..TAPS {
            let idx = (o * ic + i) * TAPS + tap;
            grad.weights[idx] = T::of(grad.weights[idx].f64() + dot_mixed(gy, &src[tap..tap + len]));
        }
    }
    grad.offsets[o] = T::of(grad.offsets[o].f64() + sum64(gy));
    if let Some(gp) = grad_padded {
        for (i, dst) in gp.chunks_exact_mut(len + 2).enumerate() {
            let k = &w.weights[(o * ic + i) * TAPS..][..TAPS];
            for tap in 0..TAPS {
                for (d, &g) in dst[tap..tap + len].iter_mut().zip(gy) {
                    *d += k[tap] * g;
                }
            }
        }
    }
}

fn dot_mixed<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x.f64() * y.f64()).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j].f64() * y[j].f64();
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Adjoint of [`conv`]: `(grad_x, grad_weights)`.
pub fn conv_backward<T: Scalar>(
    w: &ConvWeights<T>,
    x: &ChannelSignal<T>,
    grad_y: &ChannelSignal<T>,
) -> Result<(ChannelSignal<T>, ConvWeights<T>)> {
    if x.channels() != w.in_channels || grad_y.channels() != w.out_channels || grad_y.len() != x.len() {
        return Err(Error::InvalidShape("conv backward: shape mismatch".into()));
    }
    let len = x.len();
    let padded = pad_for_conv(x);
    let mut grad = ConvWeights::zeros(w.in_channels, w.out_channels);
    let mut gp = vec![T::zero(); padded.len()];
    conv_backward_padded(w, &padded, len, grad_y.as_slice(), &mut grad, Some(&mut gp));
    let gx = ChannelSignal::from_padded(&gp, w.in_channels, len);
    Ok((gx, grad))
}

impl<T: Scalar> ChannelSignal<T> {
    /// Strips the one-sample conv padding from a `channels × (len + 2)` buffer.
    pub fn from_padded(padded: &[T], channels: usize, len: usize) -> Self {
        let mut out = Self::zeros(channels, len);
        for c in 0..channels {
            out.channel_mut(c)
                .copy_from_slice(&padded[c * (len + 2) + 1..c * (len + 2) + 1 + len]);
        }
        out
    }
}
