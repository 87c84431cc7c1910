//! Multinomial softmax model of the action given `concat(x, e)`.
//!
//! Features are standardized with per-column statistics of the data the
//! model was last fitted on; the weights act on standardized features.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{affine_backward_params, affine_forward, axpy, dot};
use crate::error::{Error, Result};
use crate::estimators::ActionPosterior;
use crate::policy::{ActionId, ContextVector};
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorConfig {
    /// L2 penalty on the weights (the intercept is not penalized).
    pub l2: f64,
    pub batch_size: usize,
    /// Epoch cap for a fit from scratch or the final refit.
    pub max_epochs: usize,
    /// Stop once the relative change of the full objective between epochs
    /// falls below this.
    pub tolerance: f64,
    pub seed: RngSeed,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        PosteriorConfig { l2: 1e-3, batch_size: 256, max_epochs: 300, tolerance: 1e-7, seed: RngSeed(0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorModel {
    feature_dim: usize,
    num_actions: usize,
    /// `feature_dim × num_actions`, row-major.
    weights: Vec<f64>,
    intercept: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

/// In-place softmax with max subtraction.
pub fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - m);
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl PosteriorModel {
    /// All-zero parameters, i.e. the uniform posterior.
    pub fn new(feature_dim: usize, num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::invalid("posterior needs at least one action"));
        }
        Ok(PosteriorModel {
            feature_dim,
            num_actions,
            weights: vec![0.0; feature_dim * num_actions],
            intercept: vec![0.0; num_actions],
            shift: vec![0.0; feature_dim],
            scale: vec![1.0; feature_dim],
        })
    }

    /// Model acting on raw (unstandardized) features.
    pub fn from_parts(feature_dim: usize, num_actions: usize, weights: Vec<f64>, intercept: Vec<f64>) -> Result<Self> {
        Self::from_parts_standardized(
            feature_dim,
            num_actions,
            weights,
            intercept,
            vec![0.0; feature_dim],
            vec![1.0; feature_dim],
        )
    }

    pub fn from_parts_standardized(
        feature_dim: usize,
        num_actions: usize,
        weights: Vec<f64>,
        intercept: Vec<f64>,
        shift: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        if weights.len() != feature_dim * num_actions
            || intercept.len() != num_actions
            || num_actions == 0
            || shift.len() != feature_dim
            || scale.len() != feature_dim
        {
            return Err(Error::invalid("posterior parameters do not match the declared shape"));
        }
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("feature scales must be positive"));
        }
        Ok(PosteriorModel { feature_dim, num_actions, weights, intercept, shift, scale })
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn standardize(&self, features: &[f64]) -> Vec<f64> {
        let f = self.feature_dim;
        let mut out = features.to_vec();
        if f == 0 {
            return out;
        }
        for row in out.chunks_mut(f) {
            for c in 0..f {
                row[c] = (row[c] - self.shift[c]) / self.scale[c];
            }
        }
        out
    }

    /// Sets the standardization from column means and standard deviations
    /// of `features` (constant columns keep scale 1). Weights and intercept
    /// are rewritten so the logits of every input are unchanged.
    fn set_standardization(&mut self, features: &[f64]) {
        let f = self.feature_dim;
        let k = self.num_actions;
        if f == 0 {
            return;
        }
        let rows = (features.len() / f) as f64;
        for c in 0..f {
            let mean = features.iter().skip(c).step_by(f).sum::<f64>() / rows;
            let var = features.iter().skip(c).step_by(f).map(|v| (v - mean) * (v - mean)).sum::<f64>() / rows;
            let sd = libm::sqrt(var);
            let new_scale = if sd > 1e-12 { sd } else { 1.0 };
            let w = &mut self.weights[c * k..(c + 1) * k];
            let moved = (mean - self.shift[c]) / self.scale[c];
            axpy(&mut self.intercept, moved, w);
            let ratio = new_scale / self.scale[c];
            w.iter_mut().for_each(|v| *v *= ratio);
            self.shift[c] = mean;
            self.scale[c] = new_scale;
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> &[f64] {
        &self.intercept
    }

    /// Probabilities for `rows` feature vectors (`rows × F` row-major).
    pub fn probs_batch(&self, features: &[f64], rows: usize) -> Vec<f64> {
        self.probs_standardized(&self.standardize(features), rows)
    }

    fn probs_standardized(&self, features: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.num_actions];
        affine_forward(features, rows, &self.weights, &self.intercept, &mut out);
        for row in out.chunks_mut(self.num_actions) {
            softmax(row);
        }
        out
    }

    pub fn probs(&self, features: &[f64]) -> Vec<f64> {
        self.probs_batch(features, 1)
    }

    /// Gradient with respect to the features given `∂L/∂P` for each row,
    /// through `P = softmax(W·φ + b)`. Parameters are held fixed.
    pub fn input_gradient(&self, probs: &[f64], d_probs: &[f64], rows: usize) -> Vec<f64> {
        let k = self.num_actions;
        let f = self.feature_dim;
        let mut out = vec![0.0; rows * f];
        let mut dz = vec![0.0; k];
        for i in 0..rows {
            let p = &probs[i * k..(i + 1) * k];
            let dp = &d_probs[i * k..(i + 1) * k];
            let inner = dot(p, dp);
            for j in 0..k {
                dz[j] = p[j] * (dp[j] - inner);
            }
            for c in 0..f {
                out[i * f + c] = dot(&dz, &self.weights[c * k..(c + 1) * k]) / self.scale[c];
            }
        }
        out
    }

    /// Mean cross-entropy plus the L2 term over a full feature block.
    pub fn objective(&self, features: &[f64], labels: &[usize], l2: f64) -> f64 {
        self.objective_standardized(&self.standardize(features), labels, l2)
    }

    fn objective_standardized(&self, features: &[f64], labels: &[usize], l2: f64) -> f64 {
        let rows = labels.len();
        let p = self.probs_standardized(features, rows);
        let k = self.num_actions;
        let ce: f64 = labels.iter().enumerate().map(|(i, &y)| -libm::log(p[i * k + y].max(1e-300))).sum();
        ce / rows as f64 + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn check_fit_inputs(&self, features: &[f64], labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::invalid("posterior fit needs a non-empty batch"));
        }
        if features.len() != labels.len() * self.feature_dim {
            return Err(Error::invalid("feature block does not match the posterior feature dimension"));
        }
        if labels.iter().any(|&y| y >= self.num_actions) {
            return Err(Error::invalid("label out of range for the posterior"));
        }
        Ok(())
    }

    /// Step size `1 / L` for the smoothness bound
    /// `L = ½·max_i (‖φ_i‖² + 1) + λ` of the penalized cross-entropy.
    fn step_size(&self, features: &[f64], l2: f64) -> f64 {
        let f = self.feature_dim.max(1);
        let max_sq = features.chunks(f).map(|r| dot(r, r)).fold(0.0, f64::max);
        1.0 / (0.5 * (max_sq + 1.0) + l2)
    }

    /// Runs `epochs` passes of minibatch gradient descent, warm-started from
    /// the current parameters. The standardization is refreshed from
    /// `features` first.
    pub fn train_epochs<R: Rng + ?Sized>(
        &mut self,
        features: &[f64],
        labels: &[usize],
        epochs: usize,
        config: &PosteriorConfig,
        rng: &mut R,
    ) -> Result<()> {
        self.check_fit_inputs(features, labels)?;
        self.set_standardization(features);
        let features = self.standardize(features);
        let step = self.step_size(&features, config.l2);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        for _ in 0..epochs {
            if order.len() > config.batch_size {
                order.shuffle(rng);
            }
            self.epoch(&features, labels, &order, config, step);
        }
        Ok(())
    }

    fn epoch(&mut self, features: &[f64], labels: &[usize], order: &[usize], config: &PosteriorConfig, step: f64) {
        let f = self.feature_dim;
        let k = self.num_actions;
        let bs = config.batch_size.max(1);
        let mut block = Vec::with_capacity(bs * f);
        for chunk in order.chunks(bs) {
            block.clear();
            for &i in chunk {
                block.extend_from_slice(&features[i * f..(i + 1) * f]);
            }
            let rows = chunk.len();
            let mut dz = self.probs_standardized(&block, rows);
            let scale = 1.0 / rows as f64;
            for (r, &i) in chunk.iter().enumerate() {
                dz[r * k + labels[i]] -= 1.0;
            }
            dz.iter_mut().for_each(|v| *v *= scale);
            let mut dw = vec![0.0; f * k];
            let mut db = vec![0.0; k];
            affine_backward_params(&block, rows, &dz, &mut dw, &mut db);
            axpy(&mut dw, config.l2, &self.weights);
            axpy(&mut self.weights, -step, &dw);
            axpy(&mut self.intercept, -step, &db);
        }
    }

    /// Trains until the objective stalls or `config.max_epochs` is reached,
    /// warm-started from the current parameters. The standardization is
    /// refreshed from `features` first.
    pub fn train_to_convergence(&mut self, features: &[f64], labels: &[usize], config: &PosteriorConfig) -> Result<()> {
        self.check_fit_inputs(features, labels)?;
        self.set_standardization(features);
        let features = self.standardize(features);
        let step = self.step_size(&features, config.l2);
        let mut rng = config.seed.rng();
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut prev = self.objective_standardized(&features, labels, config.l2);
        for _ in 0..config.max_epochs {
            if order.len() > config.batch_size {
                order.shuffle(&mut rng);
            }
            self.epoch(&features, labels, &order, config, step);
            let cur = self.objective_standardized(&features, labels, config.l2);
            if !cur.is_finite() {
                return Err(Error::NonFinite("posterior objective diverged".into()));
            }
            if (prev - cur).abs() <= config.tolerance * prev.abs().max(1e-12) {
                break;
            }
            prev = cur;
        }
        Ok(())
    }
}

/// Fits a posterior from scratch on `rows × F` features.
pub fn fit_posterior(
    features: &[f64],
    labels: &[ActionId],
    num_actions: usize,
    config: &PosteriorConfig,
) -> Result<PosteriorModel> {
    if labels.is_empty() {
        return Err(Error::invalid("posterior fit needs a non-empty batch"));
    }
    if !features.len().is_multiple_of(labels.len()) {
        return Err(Error::invalid("feature block is not a whole number of rows"));
    }
    let mut model = PosteriorModel::new(features.len() / labels.len(), num_actions)?;
    let labels: Vec<usize> = labels.iter().map(|a| a.index()).collect();
    model.train_to_convergence(features, &labels, config)?;
    Ok(model)
}

/// Concatenates context and embedding into one feature row.
pub fn posterior_features(x: &[f64], e: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + e.len());
    v.extend_from_slice(x);
    v.extend_from_slice(e);
    v
}

impl ActionPosterior for PosteriorModel {
    fn posterior(&self, x: &ContextVector, e: &[f64]) -> Vec<f64> {
        self.probs(&posterior_features(x.as_slice(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_difference_gradient;

    #[test]
    fn untrained_model_is_uniform() {
        let m = PosteriorModel::new(3, 4).unwrap();
        assert_eq!(m.probs(&[0.1, 0.2, 0.3]), vec![0.25; 4]);
    }

    #[test]
    fn no_signal_gives_uniform_fit() {
        let k = 5;
        let rows = 500;
        let features: Vec<f64> = (0..rows).flat_map(|_| [0.4, 0.7, -0.2]).collect();
        let labels: Vec<ActionId> = (0..rows).map(|i| ActionId(i % k)).collect();
        let m = fit_posterior(&features, &labels, k, &PosteriorConfig::default()).unwrap();
        for p in m.probs(&[0.4, 0.7, -0.2]) {
            assert!((p - 0.2).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn one_hot_embedding_is_recovered() {
        let k = 4;
        let mut rng = RngSeed(9).rng();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..2000 {
            let a = rng.random_range(0..k);
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let mut e = [0.0; 4];
            e[a] = 1.0;
            features.extend(posterior_features(&x, &e));
            labels.push(ActionId(a));
        }
        let cfg = PosteriorConfig { l2: 0.0, max_epochs: 2000, ..PosteriorConfig::default() };
        let m = fit_posterior(&features, &labels, k, &cfg).unwrap();
        for a in 0..k {
            let mut e = [0.0; 4];
            e[a] = 1.0;
            let p = m.posterior(&ContextVector::new(vec![0.5, 0.5]).unwrap(), &e);
            assert!(p[a] >= 0.95, "action {a}: {p:?}");
        }
    }

    #[test]
    fn two_separable_samples_are_ordered() {
        let features = [1.0, -1.0];
        let labels = [ActionId(0), ActionId(1)];
        let m = fit_posterior(&features, &labels, 2, &PosteriorConfig::default()).unwrap();
        let p0 = m.probs(&[1.0]);
        let p1 = m.probs(&[-1.0]);
        assert!(p0[0] > p0[1]);
        assert!(p1[1] > p1[0]);
    }

    #[test]
    fn single_class_batch_goes_near_delta() {
        let features: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let labels = vec![ActionId(2); 50];
        let cfg = PosteriorConfig { l2: 0.0, max_epochs: 5000, tolerance: 0.0, ..PosteriorConfig::default() };
        let m = fit_posterior(&features, &labels, 3, &cfg).unwrap();
        assert!(m.probs(&[0.5])[2] > 0.95);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        assert!(fit_posterior(&[], &[], 2, &PosteriorConfig::default()).is_err());
        assert!(fit_posterior(&[1.0], &[ActionId(3)], 2, &PosteriorConfig::default()).is_err());
        assert!(PosteriorModel::new(2, 0).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = RngSeed(4).rng();
        let w: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = PosteriorModel::from_parts(3, 4, w, vec![0.1, -0.2, 0.0, 0.3]).unwrap();
        let c = [0.3, -1.2, 0.7, 2.0];
        let loss = |f: &[f64]| dot(&m.probs(f), &c) + m.probs(f)[1].powi(2);
        let feat = [0.2, -0.5, 0.9];
        let p = m.probs(&feat);
        let mut dp = c.to_vec();
        dp[1] += 2.0 * p[1];
        let analytic = m.input_gradient(&p, &dp, 1);
        let numeric = finite_difference_gradient(loss, &feat, 1e-5).unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-8);
        }
    }

    #[test]
    fn restandardizing_preserves_predictions() {
        let mut rng = RngSeed(8).rng();
        let w: Vec<f64> = (0..2 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut m = PosteriorModel::from_parts(2, 3, w, vec![0.3, 0.0, -0.4]).unwrap();
        let probe = [0.7, -2.0];
        let before = m.probs(&probe);
        m.set_standardization(&[1.0, 5.0, 3.0, 9.0, 2.0, 4.0]);
        assert_ne!(m.shift(), &[0.0, 0.0]);
        for (a, b) in before.iter().zip(m.probs(&probe)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut z = [1000.0, 999.0, -1000.0];
        softmax(&mut z);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(z[0] > z[1] && z[2] == 0.0);
    }
}
