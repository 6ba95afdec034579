//! Layer kernels. The slice-level functions work on one example laid out
//! channel-major; the `Tensor` wrappers are the standalone layer API.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Valid, stride-1 convolution of `x` (`c_in x w`) into `out` (`c_out x (w - k + 1)`).
#[allow(clippy::too_many_arguments)]
pub fn conv1d_forward(
    x: &[f64],
    c_in: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    k: usize,
    out: &mut [f64],
) {
    let wo = w - k + 1;
    for co in 0..c_out {
        let row = &mut out[co * wo..(co + 1) * wo];
        row.fill(bias[co]);
        for ci in 0..c_in {
            let xr = &x[ci * w..(ci + 1) * w];
            for d in 0..k {
                let wv = weight[(co * c_in + ci) * k + d];
                for (o, xv) in row.iter_mut().zip(&xr[d..d + wo]) {
                    *o += wv * xv;
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, if requested, the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: &[f64],
    c_in: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    k: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    mut dinput: Option<&mut [f64]>,
) {
    let wo = w - k + 1;
    for co in 0..c_out {
        let g = &dout[co * wo..(co + 1) * wo];
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..c_in {
            let xr = &x[ci * w..(ci + 1) * w];
            for d in 0..k {
                let idx = (co * c_in + ci) * k + d;
                dweight[idx] += g.iter().zip(&xr[d..d + wo]).map(|(a, b)| a * b).sum::<f64>();
                if let Some(dx) = dinput.as_deref_mut() {
                    let wv = weight[idx];
                    for (o, gv) in dx[ci * w + d..ci * w + d + wo].iter_mut().zip(g) {
                        *o += wv * gv;
                    }
                }
            }
        }
    }
}

/// Standalone convolution: `input (c_in, w)`, `weight (c_out, c_in, k)`, `bias (c_out)`.
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (&[c_in, w], &[c_out, wc_in, k]) = (input.shape(), weight.shape()) else {
        return Err(Error::Shape(format!(
            "conv1d expects input (C, W) and weight (C_out, C_in, k), got {:?} and {:?}",
            input.shape(),
            weight.shape()
        )));
    };
    if wc_in != c_in || bias.shape() != [c_out] {
        return Err(Error::Shape(format!(
            "conv1d channel mismatch: input {:?}, weight {:?}, bias {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    if w < k {
        return Err(Error::Shape(format!("conv1d input width {w} is smaller than kernel {k}")));
    }
    let mut out = Tensor::zeros(vec![c_out, w - k + 1]);
    conv1d_forward(input.data(), c_in, w, weight.data(), bias.data(), c_out, k, out.data_mut());
    Ok(out)
}

/// Start of adaptive-pool bin `b`: `floor(b * w / out_w)`.
pub fn pool_bin_start(b: usize, w: usize, out_w: usize) -> usize {
    b * w / out_w
}

/// Max over each bin; `argmax` receives the winning input position per output.
pub fn adaptive_max_pool_forward(x: &[f64], c: usize, w: usize, out_w: usize, out: &mut [f64], argmax: &mut [usize]) {
    for ch in 0..c {
        let row = &x[ch * w..(ch + 1) * w];
        for b in 0..out_w {
            let (s, e) = (pool_bin_start(b, w, out_w), pool_bin_start(b + 1, w, out_w));
            let mut best = s;
            for t in s + 1..e {
                if row[t] > row[best] {
                    best = t;
                }
            }
            out[ch * out_w + b] = row[best];
            argmax[ch * out_w + b] = ch * w + best;
        }
    }
}

pub fn adaptive_max_pool1d(input: &Tensor, out_width: usize) -> Result<Tensor> {
    let &[c, w] = input.shape() else {
        return Err(Error::Shape(format!("pool expects (C, W), got {:?}", input.shape())));
    };
    if out_width == 0 || w < out_width {
        return Err(Error::Shape(format!("pool input width {w} is smaller than output width {out_width}")));
    }
    let mut out = Tensor::zeros(vec![c, out_width]);
    let mut arg = vec![0; c * out_width];
    adaptive_max_pool_forward(input.data(), c, w, out_width, out.data_mut(), &mut arg);
    Ok(out)
}

/// `out[o] = b[o] + sum_i w[o, i] x[i]`.
pub fn linear_forward(x: &[f64], weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, v) in out.iter_mut().enumerate() {
        *v = bias[o] + weight[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy over a `(batch, n_c)` logits tensor and its
/// gradient with respect to the logits. Labels are 0-based.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[b, n] = logits.shape() else {
        return Err(Error::Shape(format!("logits must be (batch, n_c), got {:?}", logits.shape())));
    };
    if labels.len() != b || b == 0 {
        return Err(Error::Shape(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut grad = Tensor::zeros(vec![b, n]);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= n {
            return Err(Error::Shape(format!("label {y} out of range for {n} classes")));
        }
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        let g = &mut grad.data_mut()[i * n..(i + 1) * n];
        for (gj, z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() / b as f64;
        }
        g[y] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Per-channel statistics of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance over (batch, width).
    pub var: Vec<f64>,
    /// Number of values per channel.
    pub count: usize,
}

impl BatchStats {
    pub fn inv_std(&self) -> Vec<f64> {
        self.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect()
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(vec![channels], 1.0),
            beta: Tensor::zeros(vec![channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Momentum update of the running statistics; the running variance uses
    /// the unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * stats.mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * stats.var[c] * unbias;
        }
    }

    /// Standalone layer over `(batch, C, W)`. Train mode normalizes with batch
    /// statistics and updates the running ones; eval mode only reads them.
    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let &[b, c, w] = input.shape() else {
            return Err(Error::Shape(format!("batchnorm expects (B, C, W), got {:?}", input.shape())));
        };
        if c != self.channels() {
            return Err(Error::Shape(format!("batchnorm has {} channels, input {c}", self.channels())));
        }
        let x = input.data();
        let (mean, inv) = match mode {
            Mode::Train => {
                let stats = channel_stats(x, b, c, w);
                let inv = stats.inv_std();
                let mean = stats.mean.clone();
                self.update_running(&stats);
                (mean, inv)
            }
            Mode::Eval => (
                self.running_mean.clone(),
                self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            ),
        };
        let mut out = Tensor::zeros(vec![b, c, w]);
        let (g, be) = (self.gamma.data(), self.beta.data());
        for (i, (o, xv)) in out.data_mut().iter_mut().zip(x).enumerate() {
            let ch = (i / w) % c;
            *o = g[ch] * (xv - mean[ch]) * inv[ch] + be[ch];
        }
        Ok(out)
    }
}

/// Two-pass per-channel mean and biased variance of `(b, c, w)` data.
pub fn channel_stats(x: &[f64], b: usize, c: usize, w: usize) -> BatchStats {
    let count = b * w;
    let mut mean = vec![0.0; c];
    for bi in 0..b {
        for (ch, m) in mean.iter_mut().enumerate() {
            let off = (bi * c + ch) * w;
            *m += x[off..off + w].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ch in 0..c {
            let off = (bi * c + ch) * w;
            var[ch] += x[off..off + w].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    BatchStats { mean, var, count }
}
