//! The two-block 1-D CNN:
//!
//! ```text
//! Conv1D(C_in, 16, 3) -> BN -> ReLU
//! Conv1D(16, 32, 3)   -> BN -> ReLU -> AdaptiveMaxPool1D(10)
//! Flatten (32 * 10 = 320) -> Linear(320, n_c)
//! ```
//!
//! Batches are processed example-by-example between the batch-norm
//! reductions, so every per-example stage is data-parallel (see [`crate::exec`]).
//! Reductions always run in example order, which keeps results identical with
//! and without rayon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    self, adaptive_max_pool_forward, conv1d_backward, conv1d_forward, linear_forward, BatchNorm, BatchStats, Mode,
    BN_EPS,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub pool_out: usize,
    pub n_classes: usize,
}

impl CnnConfig {
    pub fn new(in_channels: usize, n_classes: usize) -> Self {
        Self {
            in_channels,
            conv1_filters: 16,
            conv2_filters: 32,
            kernel: 3,
            pool_out: 10,
            n_classes,
        }
    }

    /// Input width to the classifier; 320 for the default layout.
    pub fn flatten_width(&self) -> usize {
        self.conv2_filters * self.pool_out
    }

    /// Smallest input width that survives both convolutions and the pool.
    pub fn min_input_width(&self) -> usize {
        self.pool_out + 2 * (self.kernel - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.conv1_filters,
            self.conv2_filters,
            self.kernel,
            self.pool_out,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("CNN dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weight",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "fc.weight",
    "fc.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn {
    pub config: CnnConfig,
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub bn1: BatchNorm,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
    pub bn2: BatchNorm,
    pub fc_weight: Tensor,
    pub fc_bias: Tensor,
}

/// Gradients in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.tensors.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt()
    }
}

/// Output of a training-mode forward/backward pass.
#[derive(Debug, Clone)]
pub struct TrainPass {
    pub loss: f64,
    pub logits: Tensor,
    pub grads: Gradients,
    pub bn1: BatchStats,
    pub bn2: BatchStats,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).unwrap()
}

/// Per-example activations kept for the backward pass.
struct Activations {
    xhat1: Vec<f64>,
    a1: Vec<f64>,
    xhat2: Vec<f64>,
    a2: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    logits: Vec<f64>,
}

struct Dims {
    c_in: usize,
    w0: usize,
    c1: usize,
    w1: usize,
    c2: usize,
    w2: usize,
    k: usize,
    p: usize,
    n_c: usize,
}

fn sum_in_order(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn normalize_relu(z: &mut [f64], c: usize, w: usize, mean: &[f64], inv: &[f64], bn: &BatchNorm) -> Vec<f64> {
    let (g, b) = (bn.gamma.data(), bn.beta.data());
    let mut a = vec![0.0; c * w];
    for ch in 0..c {
        for t in ch * w..(ch + 1) * w {
            let xh = (z[t] - mean[ch]) * inv[ch];
            z[t] = xh;
            a[t] = (g[ch] * xh + b[ch]).max(0.0);
        }
    }
    a
}

fn channel_sums(z: &[f64], c: usize, w: usize) -> Vec<f64> {
    (0..c).map(|ch| z[ch * w..(ch + 1) * w].iter().sum()).collect()
}

fn centered_sq(z: &[f64], c: usize, w: usize, mean: &[f64]) -> Vec<f64> {
    (0..c)
        .map(|ch| z[ch * w..(ch + 1) * w].iter().map(|v| (v - mean[ch]).powi(2)).sum())
        .collect()
}

impl Cnn {
    /// Seeded init: weights and biases uniform in `+-sqrt(1 / fan_in)`,
    /// batch-norm scale 1 and shift 0.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c_in, c1, c2, k) = (config.in_channels, config.conv1_filters, config.conv2_filters, config.kernel);
        let f = config.flatten_width();
        Ok(Self {
            config,
            conv1_weight: uniform(&mut rng, vec![c1, c_in, k], c_in * k),
            conv1_bias: uniform(&mut rng, vec![c1], c_in * k),
            bn1: BatchNorm::new(c1),
            conv2_weight: uniform(&mut rng, vec![c2, c1, k], c1 * k),
            conv2_bias: uniform(&mut rng, vec![c2], c1 * k),
            bn2: BatchNorm::new(c2),
            fc_weight: uniform(&mut rng, vec![config.n_classes, f], f),
            fc_bias: uniform(&mut rng, vec![config.n_classes], f),
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1_weight,
            &self.conv1_bias,
            &self.bn1.gamma,
            &self.bn1.beta,
            &self.conv2_weight,
            &self.conv2_bias,
            &self.bn2.gamma,
            &self.bn2.beta,
            &self.fc_weight,
            &self.fc_bias,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1_weight,
            &mut self.conv1_bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2_weight,
            &mut self.conv2_bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    fn dims(&self, width: usize) -> Result<Dims> {
        let c = &self.config;
        if width < c.min_input_width() {
            return Err(Error::Shape(format!(
                "input width {width} too small: need at least {} for two kernel-{} convolutions and pool {}",
                c.min_input_width(),
                c.kernel,
                c.pool_out
            )));
        }
        let w1 = width - c.kernel + 1;
        Ok(Dims {
            c_in: c.in_channels,
            w0: width,
            c1: c.conv1_filters,
            w1,
            c2: c.conv2_filters,
            w2: w1 - c.kernel + 1,
            k: c.kernel,
            p: c.pool_out,
            n_c: c.n_classes,
        })
    }

    fn check_inputs(&self, inputs: &[&[f64]], width: usize) -> Result<Dims> {
        let d = self.dims(width)?;
        if inputs.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != d.c_in * width) {
            return Err(Error::Shape(format!(
                "example has {} values, expected {} channels x {width}",
                x.len(),
                d.c_in
            )));
        }
        Ok(d)
    }

    /// Forward pass; in train mode also returns the batch statistics used.
    fn forward_pass(
        &self,
        inputs: &[&[f64]],
        width: usize,
        mode: Mode,
        parallel: bool,
    ) -> Result<(Vec<Activations>, Option<(BatchStats, BatchStats)>)> {
        let d = self.check_inputs(inputs, width)?;
        let b = inputs.len();

        let mut z1: Vec<Vec<f64>> = exec::map(inputs, parallel, |x| {
            let mut z = vec![0.0; d.c1 * d.w1];
            conv1d_forward(x, d.c_in, d.w0, self.conv1_weight.data(), self.conv1_bias.data(), d.c1, d.k, &mut z);
            z
        });
        let stats1 = match mode {
            Mode::Train => Some(batch_stats(&z1, d.c1, d.w1, b, parallel)),
            Mode::Eval => None,
        };
        let (mean1, inv1) = norm_params(&self.bn1, stats1.as_ref());

        let mut stage: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = exec::map_range(b, parallel, |i| {
            let mut xh = z1[i].clone();
            let a = normalize_relu(&mut xh, d.c1, d.w1, &mean1, &inv1, &self.bn1);
            let mut z2 = vec![0.0; d.c2 * d.w2];
            conv1d_forward(&a, d.c1, d.w1, self.conv2_weight.data(), self.conv2_bias.data(), d.c2, d.k, &mut z2);
            (xh, a, z2)
        });
        z1.clear();
        let z2: Vec<Vec<f64>> = stage.iter_mut().map(|s| std::mem::take(&mut s.2)).collect();
        let stats2 = match mode {
            Mode::Train => Some(batch_stats(&z2, d.c2, d.w2, b, parallel)),
            Mode::Eval => None,
        };
        let (mean2, inv2) = norm_params(&self.bn2, stats2.as_ref());

        let acts = exec::map_range(b, parallel, |i| {
            let mut xh2 = z2[i].clone();
            let a2 = normalize_relu(&mut xh2, d.c2, d.w2, &mean2, &inv2, &self.bn2);
            let mut pooled = vec![0.0; d.c2 * d.p];
            let mut argmax = vec![0; d.c2 * d.p];
            adaptive_max_pool_forward(&a2, d.c2, d.w2, d.p, &mut pooled, &mut argmax);
            let mut logits = vec![0.0; d.n_c];
            linear_forward(&pooled, self.fc_weight.data(), self.fc_bias.data(), &mut logits);
            (xh2, a2, pooled, argmax, logits)
        });
        let acts = stage
            .into_iter()
            .zip(acts)
            .map(|((xhat1, a1, _), (xhat2, a2, pooled, argmax, logits))| Activations {
                xhat1,
                a1,
                xhat2,
                a2,
                pooled,
                argmax,
                logits,
            })
            .collect();
        Ok((acts, stats1.zip(stats2)))
    }

    /// Logits `(batch, n_c)`. Eval mode reads the running statistics; train
    /// mode normalizes with this batch's statistics and mutates nothing.
    pub fn forward(&self, inputs: &[&[f64]], width: usize, mode: Mode, parallel: bool) -> Result<Tensor> {
        let (acts, _) = self.forward_pass(inputs, width, mode, parallel)?;
        Ok(stack_logits(&acts, self.config.n_classes))
    }

    /// Mean cross-entropy in train mode, without gradients.
    pub fn loss(&self, inputs: &[&[f64]], labels: &[usize], width: usize) -> Result<f64> {
        let logits = self.forward(inputs, width, Mode::Train, false)?;
        Ok(layers::softmax_cross_entropy(&logits, labels)?.0)
    }

    /// Train-mode forward and backward pass. Labels are 0-based. Running
    /// statistics are not touched; apply [`Cnn::update_running`] separately.
    pub fn backward(&self, inputs: &[&[f64]], labels: &[usize], width: usize, parallel: bool) -> Result<TrainPass> {
        let d = self.dims(width)?;
        let (acts, stats) = self.forward_pass(inputs, width, Mode::Train, parallel)?;
        let (bn1, bn2) = stats.expect("train mode returns statistics");
        let logits = stack_logits(&acts, d.n_c);
        let (loss, dlogits) = layers::softmax_cross_entropy(&logits, labels)?;
        let b = inputs.len();
        let f = d.c2 * d.p;

        // classifier and pool, then the per-example half of bn2's backward
        struct Head {
            dfc_w: Vec<f64>,
            dfc_b: Vec<f64>,
            dy2: Vec<f64>,
            sum_dy: Vec<f64>,
            sum_dy_xh: Vec<f64>,
        }
        let heads: Vec<Head> = exec::map_range(b, parallel, |i| {
            let a = &acts[i];
            let g = dlogits.row(i);
            let mut dfc_w = vec![0.0; d.n_c * f];
            for (o, &go) in g.iter().enumerate() {
                for (dw, p) in dfc_w[o * f..(o + 1) * f].iter_mut().zip(&a.pooled) {
                    *dw = go * p;
                }
            }
            let mut dy2 = vec![0.0; d.c2 * d.w2];
            let fw = self.fc_weight.data();
            for j in 0..f {
                let dp: f64 = (0..d.n_c).map(|o| fw[o * f + j] * g[o]).sum();
                let pos = a.argmax[j];
                if a.a2[pos] > 0.0 {
                    dy2[pos] += dp;
                }
            }
            let sum_dy = channel_sums(&dy2, d.c2, d.w2);
            let sum_dy_xh = (0..d.c2)
                .map(|ch| {
                    let r = ch * d.w2..(ch + 1) * d.w2;
                    dy2[r.clone()].iter().zip(&a.xhat2[r]).map(|(x, y)| x * y).sum()
                })
                .collect();
            Head {
                dfc_w,
                dfc_b: g.to_vec(),
                dy2,
                sum_dy,
                sum_dy_xh,
            }
        });
        let dbeta2 = sum_in_order(&heads.iter().map(|h| h.sum_dy.clone()).collect::<Vec<_>>(), d.c2);
        let dgamma2 = sum_in_order(&heads.iter().map(|h| h.sum_dy_xh.clone()).collect::<Vec<_>>(), d.c2);
        let inv2 = bn2.inv_std();

        struct Mid {
            dw2: Vec<f64>,
            db2: Vec<f64>,
            dy1: Vec<f64>,
            sum_dy: Vec<f64>,
            sum_dy_xh: Vec<f64>,
        }
        let mids: Vec<Mid> = exec::map_range(b, parallel, |i| {
            let a = &acts[i];
            let dz2 = bn_input_grad(&heads[i].dy2, &a.xhat2, d.c2, d.w2, &self.bn2, &inv2, &dbeta2, &dgamma2, bn2.count);
            let mut dw2 = vec![0.0; self.conv2_weight.len()];
            let mut db2 = vec![0.0; d.c2];
            let mut da1 = vec![0.0; d.c1 * d.w1];
            conv1d_backward(
                &a.a1,
                d.c1,
                d.w1,
                self.conv2_weight.data(),
                d.c2,
                d.k,
                &dz2,
                &mut dw2,
                &mut db2,
                Some(&mut da1),
            );
            for (g, act) in da1.iter_mut().zip(&a.a1) {
                if *act <= 0.0 {
                    *g = 0.0;
                }
            }
            let sum_dy = channel_sums(&da1, d.c1, d.w1);
            let sum_dy_xh = (0..d.c1)
                .map(|ch| {
                    let r = ch * d.w1..(ch + 1) * d.w1;
                    da1[r.clone()].iter().zip(&a.xhat1[r]).map(|(x, y)| x * y).sum()
                })
                .collect();
            Mid {
                dw2,
                db2,
                dy1: da1,
                sum_dy,
                sum_dy_xh,
            }
        });
        let dbeta1 = sum_in_order(&mids.iter().map(|m| m.sum_dy.clone()).collect::<Vec<_>>(), d.c1);
        let dgamma1 = sum_in_order(&mids.iter().map(|m| m.sum_dy_xh.clone()).collect::<Vec<_>>(), d.c1);
        let inv1 = bn1.inv_std();

        let tails: Vec<(Vec<f64>, Vec<f64>)> = exec::map_range(b, parallel, |i| {
            let a = &acts[i];
            let dz1 = bn_input_grad(&mids[i].dy1, &a.xhat1, d.c1, d.w1, &self.bn1, &inv1, &dbeta1, &dgamma1, bn1.count);
            let mut dw1 = vec![0.0; self.conv1_weight.len()];
            let mut db1 = vec![0.0; d.c1];
            conv1d_backward(inputs[i], d.c_in, d.w0, self.conv1_weight.data(), d.c1, d.k, &dz1, &mut dw1, &mut db1, None);
            (dw1, db1)
        });

        let shape = |t: &Tensor| t.shape().to_vec();
        let tensor = |t: &Tensor, v: Vec<f64>| Tensor::new(shape(t), v).unwrap();
        let dw1 = sum_in_order(&tails.iter().map(|t| t.0.clone()).collect::<Vec<_>>(), self.conv1_weight.len());
        let db1 = sum_in_order(&tails.iter().map(|t| t.1.clone()).collect::<Vec<_>>(), d.c1);
        let dw2 = sum_in_order(&mids.iter().map(|m| m.dw2.clone()).collect::<Vec<_>>(), self.conv2_weight.len());
        let db2 = sum_in_order(&mids.iter().map(|m| m.db2.clone()).collect::<Vec<_>>(), d.c2);
        let dfc_w = sum_in_order(&heads.iter().map(|h| h.dfc_w.clone()).collect::<Vec<_>>(), self.fc_weight.len());
        let dfc_b = sum_in_order(&heads.iter().map(|h| h.dfc_b.clone()).collect::<Vec<_>>(), d.n_c);

        let grads = Gradients {
            tensors: vec![
                tensor(&self.conv1_weight, dw1),
                tensor(&self.conv1_bias, db1),
                tensor(&self.bn1.gamma, dgamma1),
                tensor(&self.bn1.beta, dbeta1),
                tensor(&self.conv2_weight, dw2),
                tensor(&self.conv2_bias, db2),
                tensor(&self.bn2.gamma, dgamma2),
                tensor(&self.bn2.beta, dbeta2),
                tensor(&self.fc_weight, dfc_w),
                tensor(&self.fc_bias, dfc_b),
            ],
        };
        Ok(TrainPass {
            loss,
            logits,
            grads,
            bn1,
            bn2,
        })
    }

    pub fn update_running(&mut self, bn1: &BatchStats, bn2: &BatchStats) {
        self.bn1.update_running(bn1);
        self.bn2.update_running(bn2);
    }

    /// Arg-max class (0-based) per input, eval mode.
    pub fn predict(&self, inputs: &[&[f64]], width: usize, parallel: bool) -> Result<Vec<usize>> {
        let logits = self.forward(inputs, width, Mode::Eval, parallel)?;
        Ok((0..inputs.len()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn stack_logits(acts: &[Activations], n_c: usize) -> Tensor {
    let data = acts.iter().flat_map(|a| a.logits.iter().copied()).collect();
    Tensor::new(vec![acts.len(), n_c], data).unwrap()
}

fn batch_stats(z: &[Vec<f64>], c: usize, w: usize, b: usize, parallel: bool) -> BatchStats {
    let count = b * w;
    let sums = exec::map(z, parallel, |zi| channel_sums(zi, c, w));
    let mean: Vec<f64> = sum_in_order(&sums, c).into_iter().map(|s| s / count as f64).collect();
    let sq = exec::map(z, parallel, |zi| centered_sq(zi, c, w, &mean));
    let var = sum_in_order(&sq, c).into_iter().map(|s| s / count as f64).collect();
    BatchStats { mean, var, count }
}

fn norm_params(bn: &BatchNorm, stats: Option<&BatchStats>) -> (Vec<f64>, Vec<f64>) {
    match stats {
        Some(s) => (s.mean.clone(), s.inv_std()),
        None => (
            bn.running_mean.clone(),
            bn.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
        ),
    }
}

/// `dz = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))`.
#[allow(clippy::too_many_arguments)]
fn bn_input_grad(
    dy: &[f64],
    xhat: &[f64],
    c: usize,
    w: usize,
    bn: &BatchNorm,
    inv: &[f64],
    dbeta: &[f64],
    dgamma: &[f64],
    count: usize,
) -> Vec<f64> {
    let n = count as f64;
    let g = bn.gamma.data();
    let mut dz = vec![0.0; c * w];
    for ch in 0..c {
        let scale = g[ch] * inv[ch] / n;
        for t in ch * w..(ch + 1) * w {
            dz[t] = scale * (n * dy[t] - dbeta[ch] - xhat[t] * dgamma[ch]);
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(b: usize, c: usize, w: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..b).map(|_| (0..c * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn default_shapes() {
        let cfg = CnnConfig::new(1, 3);
        assert_eq!(cfg.flatten_width(), 320);
        assert_eq!(cfg.min_input_width(), 14);
        let m = Cnn::new(cfg, 0).unwrap();
        let x = batch(4, 1, 512, 1);
        let logits = m.forward(&refs(&x), 512, Mode::Train, false).unwrap();
        assert_eq!(logits.shape(), &[4, 3]);
        assert!(m.forward(&refs(&batch(1, 1, 13, 0)), 13, Mode::Eval, false).is_err());
    }

    #[test]
    fn parallel_variant_param_difference() {
        let single = Cnn::new(CnnConfig::new(1, 4), 0).unwrap();
        for m in 2..5 {
            let par = Cnn::new(CnnConfig::new(m, 4), 0).unwrap();
            assert_eq!(par.param_count() - single.param_count(), 16 * (m - 1) * 3);
        }
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let a = Cnn::new(CnnConfig::new(2, 3), 7).unwrap();
        let b = Cnn::new(CnnConfig::new(2, 3), 7).unwrap();
        assert_eq!(a, b);
        let bound = (1.0f64 / 320.0).sqrt();
        assert!(a.fc_weight.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn parallel_and_sequential_passes_agree() {
        let m = Cnn::new(CnnConfig::new(2, 3), 3).unwrap();
        let x = batch(9, 2, 40, 5);
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2];
        let a = m.backward(&refs(&x), &labels, 40, false).unwrap();
        let b = m.backward(&refs(&x), &labels, 40, true).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grads, b.grads);
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let m = Cnn::new(CnnConfig::new(1, 3), 11).unwrap();
        let x = batch(3, 1, 32, 2);
        let labels = [0, 1, 2];
        let once = m.backward(&refs(&x), &labels, 32, false).unwrap();
        let mut xx = x.clone();
        xx.extend(x.iter().cloned());
        let twice = m.backward(&refs(&xx), &[0, 1, 2, 0, 1, 2], 32, false).unwrap();
        assert!((once.loss - twice.loss).abs() < 1e-12);
        for (a, b) in once.grads.tensors.iter().zip(&twice.grads.tensors) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn saturated_correct_logits_give_tiny_gradients() {
        let mut m = Cnn::new(CnnConfig::new(1, 2), 1).unwrap();
        m.fc_weight.data_mut().fill(0.0);
        m.fc_bias.data_mut().copy_from_slice(&[40.0, 0.0]);
        let x = batch(4, 1, 32, 3);
        let pass = m.backward(&refs(&x), &[0, 0, 0, 0], 32, false).unwrap();
        assert!(pass.grads.norm() < 1e-6);
        assert!(pass.loss < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = Cnn::new(CnnConfig::new(1, 5), 2).unwrap();
        let x = batch(3, 1, 64, 4);
        let logits = m.forward(&refs(&x), 64, Mode::Train, false).unwrap();
        for i in 0..3 {
            let p = layers::softmax(logits.row(i));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut m = Cnn::new(CnnConfig::new(1, 3), 2).unwrap();
        let x = batch(5, 1, 64, 4);
        let pass = m.backward(&refs(&x), &[0, 1, 2, 0, 1], 64, false).unwrap();
        m.update_running(&pass.bn1, &pass.bn2);
        let snapshot = m.clone();
        let a = m.forward(&refs(&x), 64, Mode::Eval, false).unwrap();
        let b = m.forward(&refs(&x), 64, Mode::Eval, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, snapshot);
    }
}
