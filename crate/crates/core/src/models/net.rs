//! Context-action embedding network.
//!
//! Input is the context concatenated with a one-hot action. Two hidden
//! layers of `linear → batchnorm → ReLU → dropout` are followed by a linear
//! output layer of width `d_e = d`, so the predicted reward is `f(x, a)ᵀ x`.
//!
//! Parameters live in one flat vector (see [`NetShape::param_len`]) in the
//! order `W1 b1 γ1 β1 W2 b2 γ2 β2 W3 b3`, weights stored `in × out`
//! row-major. Batchnorm running statistics are kept separately.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{affine_backward_input, affine_backward_params, affine_forward, axpy, dot};
use crate::error::{Error, Result};
use crate::policy::{ActionId, ContextVector};
use crate::rng::RngSeed;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics for batchnorm; dropout when a generator is supplied.
    Train,
    /// Running statistics, no dropout. Deterministic.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub context_dim: usize,
    pub num_actions: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone)]
struct Offsets {
    w1: Range<usize>,
    b1: Range<usize>,
    g1: Range<usize>,
    be1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    g2: Range<usize>,
    be2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
}

impl NetShape {
    pub fn input_dim(&self) -> usize {
        self.context_dim + self.num_actions
    }

    fn offsets(&self) -> Offsets {
        let h = self.hidden;
        let mut at = 0;
        let mut take = |len: usize| {
            let r = at..at + len;
            at += len;
            r
        };
        Offsets {
            w1: take(self.input_dim() * h),
            b1: take(h),
            g1: take(h),
            be1: take(h),
            w2: take(h * h),
            b2: take(h),
            g2: take(h),
            be2: take(h),
            w3: take(h * self.output_dim),
            b3: take(self.output_dim),
        }
    }

    pub fn param_len(&self) -> usize {
        self.offsets().b3.end
    }
}

/// Running mean and variance of both batchnorm layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    shape: NetShape,
    params: Vec<f64>,
    stats: BatchNormStats,
    dropout: f64,
    mode: Mode,
}

struct HiddenCache {
    z: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// `h = keep * y` with `keep ∈ {0, 1/(1-p)}` (ReLU and dropout together).
    keep: Vec<f64>,
    h: Vec<f64>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardPass {
    rows: usize,
    mode: Mode,
    xs: Vec<f64>,
    actions: Vec<usize>,
    l1: HiddenCache,
    l2: HiddenCache,
    output: Vec<f64>,
}

impl ForwardPass {
    /// Embeddings, `rows × d_e` row-major.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        let de = self.output.len() / self.rows;
        &self.output[i * de..(i + 1) * de]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl EmbeddingNet {
    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)` for weights
    /// and biases; batchnorm scale 1, shift 0.
    pub fn new(shape: NetShape, dropout: f64, seed: RngSeed) -> Result<Self> {
        if shape.context_dim == 0 || shape.num_actions == 0 || shape.hidden == 0 || shape.output_dim == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        let o = shape.offsets();
        let mut params = vec![0.0; shape.param_len()];
        let mut rng = seed.rng();
        let mut fill = |range: Range<usize>, fan_in: usize, params: &mut [f64]| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        fill(o.w1.clone(), shape.input_dim(), &mut params);
        fill(o.b1.clone(), shape.input_dim(), &mut params);
        fill(o.w2.clone(), shape.hidden, &mut params);
        fill(o.b2.clone(), shape.hidden, &mut params);
        fill(o.w3.clone(), shape.hidden, &mut params);
        fill(o.b3.clone(), shape.hidden, &mut params);
        params[o.g1].fill(1.0);
        params[o.g2].fill(1.0);
        let h = shape.hidden;
        Ok(EmbeddingNet {
            shape,
            params,
            stats: BatchNormStats { mean1: vec![0.0; h], var1: vec![1.0; h], mean2: vec![0.0; h], var2: vec![1.0; h] },
            dropout,
            mode: Mode::Train,
        })
    }

    /// Rebuilds a network from stored parts.
    pub fn from_parts(shape: NetShape, params: Vec<f64>, stats: BatchNormStats, dropout: f64) -> Result<Self> {
        let h = shape.hidden;
        if params.len() != shape.param_len()
            || [&stats.mean1, &stats.var1, &stats.mean2, &stats.var2].iter().any(|v| v.len() != h)
        {
            return Err(Error::invalid("stored parameters do not match the network shape"));
        }
        Ok(EmbeddingNet { shape, params, stats, dropout, mode: Mode::Eval })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &BatchNormStats {
        &self.stats
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Forward pass over `rows` inputs. `xs` is `rows × d` row-major.
    /// Dropout is applied only in train mode and only when `rng` is given.
    pub fn forward<R: Rng + ?Sized>(&self, xs: &[f64], actions: &[usize], rng: Option<&mut R>) -> Result<ForwardPass> {
        self.forward_with(self.params(), xs, actions, rng)
    }

    fn check_inputs(&self, xs: &[f64], actions: &[usize]) -> Result<usize> {
        let rows = actions.len();
        if rows == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if xs.len() != rows * self.shape.context_dim {
            return Err(Error::invalid("context block does not match the network input dimension"));
        }
        if actions.iter().any(|&a| a >= self.shape.num_actions) {
            return Err(Error::invalid("action index out of range for the network"));
        }
        Ok(rows)
    }

    /// Forward pass with an explicit parameter vector (used by gradient checks).
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        params: &[f64],
        xs: &[f64],
        actions: &[usize],
        mut rng: Option<&mut R>,
    ) -> Result<ForwardPass> {
        let rows = self.check_inputs(xs, actions)?;
        let s = self.shape;
        let o = s.offsets();
        let h = s.hidden;
        let d = s.context_dim;

        // First layer exploits the one-hot half of the input.
        let w1 = &params[o.w1.clone()];
        let mut z1 = vec![0.0; rows * h];
        for i in 0..rows {
            let row = &mut z1[i * h..(i + 1) * h];
            row.copy_from_slice(&params[o.b1.clone()]);
            for k in 0..d {
                let v = xs[i * d + k];
                if v != 0.0 {
                    axpy(row, v, &w1[k * h..(k + 1) * h]);
                }
            }
            let a = d + actions[i];
            axpy(row, 1.0, &w1[a * h..(a + 1) * h]);
        }
        let l1 = self.hidden_forward(z1, rows, &params[o.g1], &params[o.be1], 1, rng.as_deref_mut());

        let mut z2 = vec![0.0; rows * h];
        affine_forward(&l1.h, rows, &params[o.w2], &params[o.b2], &mut z2);
        let l2 = self.hidden_forward(z2, rows, &params[o.g2], &params[o.be2], 2, rng);

        let mut output = vec![0.0; rows * s.output_dim];
        affine_forward(&l2.h, rows, &params[o.w3], &params[o.b3], &mut output);

        Ok(ForwardPass { rows, mode: self.mode, xs: xs.to_vec(), actions: actions.to_vec(), l1, l2, output })
    }

    fn hidden_forward<R: Rng + ?Sized>(
        &self,
        z: Vec<f64>,
        rows: usize,
        gamma: &[f64],
        beta: &[f64],
        layer: usize,
        rng: Option<&mut R>,
    ) -> HiddenCache {
        let h = gamma.len();
        let (mean, var) = match self.mode {
            Mode::Train => {
                let mut mean = vec![0.0; h];
                for i in 0..rows {
                    axpy(&mut mean, 1.0, &z[i * h..(i + 1) * h]);
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; h];
                for i in 0..rows {
                    for j in 0..h {
                        let c = z[i * h + j] - mean[j];
                        var[j] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v /= rows as f64);
                (mean, var)
            }
            Mode::Eval => {
                let (m, v) = if layer == 1 {
                    (&self.stats.mean1, &self.stats.var1)
                } else {
                    (&self.stats.mean2, &self.stats.var2)
                };
                (m.clone(), v.clone())
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();
        let mut xhat = vec![0.0; rows * h];
        let mut keep = vec![0.0; rows * h];
        let mut out = vec![0.0; rows * h];
        let drop = self.mode == Mode::Train && self.dropout > 0.0;
        let scale = 1.0 / (1.0 - self.dropout);
        let mut rng = rng;
        for i in 0..rows {
            for j in 0..h {
                let idx = i * h + j;
                let xh = (z[idx] - mean[j]) * inv_std[j];
                xhat[idx] = xh;
                let y = gamma[j] * xh + beta[j];
                let mut k = if y > 0.0 { 1.0 } else { 0.0 };
                if drop {
                    if let Some(r) = rng.as_deref_mut() {
                        k = if r.random::<f64>() < self.dropout { 0.0 } else { k * scale };
                    }
                }
                keep[idx] = k;
                out[idx] = k * y;
            }
        }
        HiddenCache { z, xhat, inv_std, batch_mean: mean, batch_var: var, keep, h: out }
    }

    /// Gradient of a loss with respect to all parameters, given
    /// `d_output = ∂L/∂embeddings` (`rows × d_e`).
    pub fn backward(&self, pass: &ForwardPass, d_output: &[f64]) -> Vec<f64> {
        self.backward_with(self.params(), pass, d_output)
    }

    pub fn backward_with(&self, params: &[f64], pass: &ForwardPass, d_output: &[f64]) -> Vec<f64> {
        let s = self.shape;
        let o = s.offsets();
        let rows = pass.rows;
        let h = s.hidden;
        let d = s.context_dim;
        let mut grad = vec![0.0; s.param_len()];

        // Output layer.
        {
            let (head, tail) = grad.split_at_mut(o.b3.start);
            affine_backward_params(&pass.l2.h, rows, d_output, &mut head[o.w3.clone()], &mut tail[..s.output_dim]);
        }
        let mut dh2 = vec![0.0; rows * h];
        affine_backward_input(d_output, rows, &params[o.w3.clone()], &pass.l2.keep, &mut dh2);
        let dz2 = hidden_backward(&pass.l2, pass.mode, rows, &params[o.g2.clone()], &dh2, &mut grad, &o.g2, &o.be2);

        // Second layer.
        {
            let (head, tail) = grad.split_at_mut(o.b2.start);
            affine_backward_params(&pass.l1.h, rows, &dz2, &mut head[o.w2.clone()], &mut tail[..h]);
        }
        let mut dh1 = vec![0.0; rows * h];
        affine_backward_input(&dz2, rows, &params[o.w2.clone()], &pass.l1.keep, &mut dh1);
        let dz1 = hidden_backward(&pass.l1, pass.mode, rows, &params[o.g1.clone()], &dh1, &mut grad, &o.g1, &o.be1);

        // First layer: dense context part plus the one-hot action row.
        for i in 0..rows {
            let g = &dz1[i * h..(i + 1) * h];
            axpy(&mut grad[o.b1.clone()], 1.0, g);
            for k in 0..d {
                let v = pass.xs[i * d + k];
                if v != 0.0 {
                    let start = o.w1.start + k * h;
                    axpy(&mut grad[start..start + h], v, g);
                }
            }
            let start = o.w1.start + (d + pass.actions[i]) * h;
            axpy(&mut grad[start..start + h], 1.0, g);
        }
        grad
    }

    /// Moves the running batchnorm statistics toward the batch statistics of
    /// a train-mode pass (unbiased variance, momentum [`BN_MOMENTUM`]).
    pub fn update_running_stats(&mut self, pass: &ForwardPass) {
        if pass.mode != Mode::Train {
            return;
        }
        let n = pass.rows as f64;
        let correction = if pass.rows > 1 { n / (n - 1.0) } else { 1.0 };
        let blend = |running: &mut [f64], batch: &[f64], corr: f64| {
            for (r, b) in running.iter_mut().zip(batch) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b * corr;
            }
        };
        blend(&mut self.stats.mean1, &pass.l1.batch_mean, 1.0);
        blend(&mut self.stats.var1, &pass.l1.batch_var, correction);
        blend(&mut self.stats.mean2, &pass.l2.batch_mean, 1.0);
        blend(&mut self.stats.var2, &pass.l2.batch_var, correction);
    }

    /// Embedding of one `(x, a)` pair in the network's current mode, without
    /// dropout.
    pub fn embed(&self, x: &ContextVector, a: ActionId) -> Result<Vec<f64>> {
        if x.dim() != self.shape.context_dim {
            return Err(Error::invalid("context dimension does not match the network"));
        }
        let pass = self.forward::<crate::rng::TrialRng>(x.as_slice(), &[a.index()], None)?;
        Ok(pass.output)
    }

    /// Eval-mode embeddings for many pairs; `xs` is `rows × d`.
    pub fn embed_batch(&self, xs: &[f64], actions: &[usize]) -> Result<Vec<f64>> {
        let mut eval = self.clone_shallow_eval();
        eval.mode = Mode::Eval;
        Ok(eval.forward::<crate::rng::TrialRng>(xs, actions, None)?.output)
    }

    fn clone_shallow_eval(&self) -> EmbeddingNet {
        self.clone()
    }

    /// `r̂(x, a) = f(x, a)ᵀ x`.
    pub fn predict_reward(&self, x: &ContextVector, a: ActionId) -> Result<f64> {
        if self.shape.output_dim != self.shape.context_dim {
            return Err(Error::invalid("embedding dimension must equal context dimension"));
        }
        let e = self.embed(x, a)?;
        Ok(dot(&e, x.as_slice()))
    }

    /// Eval-mode reward predictions for every action of one context.
    pub fn predict_all_actions(&self, x: &ContextVector) -> Result<Vec<f64>> {
        if self.shape.output_dim != self.shape.context_dim {
            return Err(Error::invalid("embedding dimension must equal context dimension"));
        }
        let k = self.shape.num_actions;
        let d = self.shape.context_dim;
        let mut xs = Vec::with_capacity(k * d);
        for _ in 0..k {
            xs.extend_from_slice(x.as_slice());
        }
        let actions: Vec<usize> = (0..k).collect();
        let e = self.embed_batch(&xs, &actions)?;
        Ok((0..k).map(|a| dot(&e[a * d..(a + 1) * d], x.as_slice())).collect())
    }
}

#[allow(clippy::too_many_arguments)]
fn hidden_backward(
    cache: &HiddenCache,
    mode: Mode,
    rows: usize,
    gamma: &[f64],
    dh: &[f64],
    grad: &mut [f64],
    g_range: &Range<usize>,
    b_range: &Range<usize>,
) -> Vec<f64> {
    let h = gamma.len();
    // dy = dh * keep; then the affine part of batchnorm.
    let mut dxhat = vec![0.0; rows * h];
    let mut dgamma = vec![0.0; h];
    let mut dbeta = vec![0.0; h];
    for i in 0..rows {
        for j in 0..h {
            let idx = i * h + j;
            let dy = dh[idx] * cache.keep[idx];
            dgamma[j] += dy * cache.xhat[idx];
            dbeta[j] += dy;
            dxhat[idx] = dy * gamma[j];
        }
    }
    axpy(&mut grad[g_range.clone()], 1.0, &dgamma);
    axpy(&mut grad[b_range.clone()], 1.0, &dbeta);

    let mut dz = vec![0.0; rows * h];
    match mode {
        Mode::Eval => {
            for i in 0..rows {
                for j in 0..h {
                    dz[i * h + j] = dxhat[i * h + j] * cache.inv_std[j];
                }
            }
        }
        Mode::Train => {
            let n = rows as f64;
            let mut sum = vec![0.0; h];
            let mut sum_x = vec![0.0; h];
            for i in 0..rows {
                for j in 0..h {
                    let idx = i * h + j;
                    sum[j] += dxhat[idx];
                    sum_x[j] += dxhat[idx] * cache.xhat[idx];
                }
            }
            for i in 0..rows {
                for j in 0..h {
                    let idx = i * h + j;
                    dz[idx] = cache.inv_std[j] / n * (n * dxhat[idx] - sum[j] - cache.xhat[idx] * sum_x[j]);
                }
            }
        }
    }
    let _ = &cache.z;
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_difference_gradient;
    use crate::rng::TrialRng;

    fn shape() -> NetShape {
        NetShape { context_dim: 3, num_actions: 4, hidden: 8, output_dim: 3 }
    }

    fn batch(rows: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = RngSeed(seed).rng();
        let xs = (0..rows * 3).map(|_| rng.random::<f64>()).collect();
        let actions = (0..rows).map(|_| rng.random_range(0..4)).collect();
        (xs, actions)
    }

    #[test]
    fn zero_network_gives_zero_embedding() {
        let mut net = EmbeddingNet::new(shape(), 0.2, RngSeed(1)).unwrap();
        net.params_mut().fill(0.0);
        net.set_mode(Mode::Eval);
        let x = ContextVector::new(vec![0.3, 0.2, 0.9]).unwrap();
        assert_eq!(net.embed(&x, ActionId(2)).unwrap(), vec![0.0; 3]);
        assert_eq!(net.predict_reward(&x, ActionId(2)).unwrap(), 0.0);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut net = EmbeddingNet::new(shape(), 0.2, RngSeed(1)).unwrap();
        net.set_mode(Mode::Eval);
        let x = ContextVector::new(vec![0.3, 0.2, 0.9]).unwrap();
        assert_eq!(net.embed(&x, ActionId(1)).unwrap(), net.embed(&x, ActionId(1)).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let net = EmbeddingNet::new(shape(), 0.2, RngSeed(1)).unwrap();
        let x = ContextVector::new(vec![0.3, 0.2]).unwrap();
        assert!(net.embed(&x, ActionId(1)).is_err());
        assert!(net.embed(&ContextVector::new(vec![0.3, 0.2, 0.1]).unwrap(), ActionId(9)).is_err());
        let wide = EmbeddingNet::new(NetShape { output_dim: 2, ..shape() }, 0.2, RngSeed(1)).unwrap();
        assert!(wide.predict_reward(&ContextVector::new(vec![0.3, 0.2, 0.1]).unwrap(), ActionId(0)).is_err());
    }

    #[test]
    fn batchnorm_normalizes_training_batches() {
        let s = NetShape { context_dim: 5, num_actions: 10, hidden: 16, output_dim: 5 };
        let net = EmbeddingNet::new(s, 0.2, RngSeed(3)).unwrap();
        let mut rng = RngSeed(4).rng();
        let xs: Vec<f64> = (0..64 * 5).map(|_| rng.random::<f64>()).collect();
        let actions: Vec<usize> = (0..64).map(|_| rng.random_range(0..10)).collect();
        let pass = net.forward::<TrialRng>(&xs, &actions, None).unwrap();
        for cache in [&pass.l1, &pass.l2] {
            for j in 0..16 {
                let col: Vec<f64> = (0..64).map(|i| cache.xhat[i * 16 + j]).collect();
                let mean = col.iter().sum::<f64>() / 64.0;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
                assert!(mean.abs() < 1e-5);
                // xhat variance is var / (var + eps)
                let raw = cache.batch_var[j];
                assert!((var - raw / (raw + BN_EPS)).abs() < 1e-5);
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let mut net = EmbeddingNet::new(shape(), 0.5, RngSeed(1)).unwrap();
        let (xs, actions) = batch(16, 2);
        let mut r1 = RngSeed(5).rng();
        let mut r2 = RngSeed(6).rng();
        let a = net.forward(&xs, &actions, Some(&mut r1)).unwrap();
        let b = net.forward(&xs, &actions, Some(&mut r2)).unwrap();
        assert_ne!(a.output, b.output);
        net.set_mode(Mode::Eval);
        let a = net.forward(&xs, &actions, Some(&mut r1)).unwrap();
        let b = net.forward(&xs, &actions, Some(&mut r2)).unwrap();
        assert_eq!(a.output, b.output);
    }

    fn check_gradient(mode: Mode) {
        let mut net = EmbeddingNet::new(shape(), 0.2, RngSeed(11)).unwrap();
        // Nontrivial running statistics for the frozen case.
        let (xs, actions) = batch(6, 12);
        let warm = net.forward::<TrialRng>(&xs, &actions, None).unwrap();
        net.update_running_stats(&warm);
        net.set_mode(mode);
        let target: Vec<f64> = (0..6 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let loss = |p: &[f64]| {
            let pass = net.forward_with::<TrialRng>(p, &xs, &actions, None).unwrap();
            pass.output.iter().zip(&target).map(|(o, t)| o * t + 0.5 * o * o).sum::<f64>()
        };
        let pass = net.forward::<TrialRng>(&xs, &actions, None).unwrap();
        let d_out: Vec<f64> = pass.output.iter().zip(&target).map(|(o, t)| t + o).collect();
        let analytic = net.backward(&pass, &d_out);
        let numeric = finite_difference_gradient(loss, net.params(), 1e-5).unwrap();
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {a}, numeric {n}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_frozen() {
        check_gradient(Mode::Eval);
    }

    #[test]
    fn backward_matches_finite_differences_batch_stats() {
        check_gradient(Mode::Train);
    }

    #[test]
    fn running_stats_track_batches() {
        let mut net = EmbeddingNet::new(shape(), 0.0, RngSeed(1)).unwrap();
        let (xs, actions) = batch(32, 3);
        for _ in 0..200 {
            let pass = net.forward::<TrialRng>(&xs, &actions, None).unwrap();
            net.update_running_stats(&pass);
        }
        let pass = net.forward::<TrialRng>(&xs, &actions, None).unwrap();
        for j in 0..8 {
            assert!((net.bn_stats().mean1[j] - pass.l1.batch_mean[j]).abs() < 1e-6);
        }
    }
}
