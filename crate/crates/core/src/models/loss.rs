//! Reward, bias-bound and variance-bound losses and their gradient with
//! respect to the embeddings.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::linalg::dot;
use super::net::{EmbeddingNet, ForwardPass};
use super::posterior::PosteriorModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::sample_weight_row;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_bias: f64,
    pub l_var: f64,
    pub total: f64,
    pub rho: f64,
    pub gamma: f64,
}

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rho: f64,
    pub gamma: f64,
    /// Use logged rewards instead of predictions in the variance term.
    pub variance_uses_logged_reward: bool,
}

impl LossWeights {
    pub fn new(rho: f64, gamma: f64) -> Self {
        LossWeights { rho, gamma, variance_uses_logged_reward: false }
    }
}

/// A minibatch with its importance-weight rows `w(x_i, ·)` precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    context_dim: usize,
    num_actions: usize,
    contexts: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    weights: Vec<f64>,
    /// Per row, action indices sorted by weight.
    orders: Vec<u32>,
}

/// Importance-weight row used by the losses. Actions the behavior policy
/// never takes get weight 0.
pub fn loss_weight_row<P: Policy + ?Sized, M: Policy + ?Sized>(
    sample: &crate::data::LoggedSample,
    pi: &P,
    mu: &M,
) -> Vec<f64> {
    sample_weight_row(sample, pi, mu).into_iter().map(|w| w.unwrap_or(0.0)).collect()
}

fn sort_order(w: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..w.len() as u32).collect();
    idx.sort_by(|&a, &b| w[a as usize].total_cmp(&w[b as usize]));
    idx
}

impl LossBatch {
    pub fn new(
        context_dim: usize,
        num_actions: usize,
        contexts: Vec<f64>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let rows = actions.len();
        if rows == 0 {
            return Err(Error::invalid("loss batch must be non-empty"));
        }
        if contexts.len() != rows * context_dim || rewards.len() != rows || weights.len() != rows * num_actions {
            return Err(Error::invalid("loss batch blocks have inconsistent lengths"));
        }
        if actions.iter().any(|&a| a >= num_actions) {
            return Err(Error::invalid("loss batch action out of range"));
        }
        let orders = weights.chunks(num_actions).flat_map(sort_order).collect();
        Ok(LossBatch { context_dim, num_actions, contexts, actions, rewards, weights, orders })
    }

    /// Batch of the given dataset rows.
    pub fn from_dataset<P: Policy + ?Sized, M: Policy + ?Sized>(
        data: &Dataset,
        indices: &[usize],
        pi: &P,
        mu: &M,
    ) -> Result<Self> {
        let mut contexts = Vec::with_capacity(indices.len() * data.context_dim());
        let mut actions = Vec::with_capacity(indices.len());
        let mut rewards = Vec::with_capacity(indices.len());
        let mut weights = Vec::with_capacity(indices.len() * data.num_actions());
        for &i in indices {
            let s = data
                .samples()
                .get(i)
                .ok_or_else(|| Error::invalid("batch index out of range"))?;
            contexts.extend_from_slice(s.context.as_slice());
            actions.push(s.action.index());
            rewards.push(s.reward);
            weights.extend(loss_weight_row(s, pi, mu));
        }
        LossBatch::new(data.context_dim(), data.num_actions(), contexts, actions, rewards, weights)
    }

    /// Gathers rows from a cache of per-sample weight rows and orders.
    pub(crate) fn gather(cache: &SampleCache, indices: &[usize]) -> Self {
        let d = cache.context_dim;
        let k = cache.num_actions;
        let mut b = LossBatch {
            context_dim: d,
            num_actions: k,
            contexts: Vec::with_capacity(indices.len() * d),
            actions: Vec::with_capacity(indices.len()),
            rewards: Vec::with_capacity(indices.len()),
            weights: Vec::with_capacity(indices.len() * k),
            orders: Vec::with_capacity(indices.len() * k),
        };
        for &i in indices {
            b.contexts.extend_from_slice(&cache.contexts[i * d..(i + 1) * d]);
            b.actions.push(cache.actions[i]);
            b.rewards.push(cache.rewards[i]);
            b.weights.extend_from_slice(&cache.weights[i * k..(i + 1) * k]);
            b.orders.extend_from_slice(&cache.orders[i * k..(i + 1) * k]);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contexts(&self) -> &[f64] {
        &self.contexts
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.num_actions..(i + 1) * self.num_actions]
    }

    pub fn context(&self, i: usize) -> &[f64] {
        &self.contexts[i * self.context_dim..(i + 1) * self.context_dim]
    }

    /// `concat(x_i, e_i)` rows for the posterior.
    pub fn posterior_features(&self, embeddings: &[f64]) -> Vec<f64> {
        let de = embeddings.len() / self.len();
        let mut out = Vec::with_capacity(self.len() * (self.context_dim + de));
        for i in 0..self.len() {
            out.extend_from_slice(self.context(i));
            out.extend_from_slice(&embeddings[i * de..(i + 1) * de]);
        }
        out
    }
}

/// Per-sample data of a whole dataset, computed once per training run.
pub(crate) struct SampleCache {
    pub context_dim: usize,
    pub num_actions: usize,
    pub contexts: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub weights: Vec<f64>,
    pub orders: Vec<u32>,
}

impl SampleCache {
    pub fn new<P: Policy + ?Sized, M: Policy + ?Sized>(data: &Dataset, pi: &P, mu: &M) -> Result<Self> {
        let all: Vec<usize> = (0..data.len()).collect();
        let b = LossBatch::from_dataset(data, &all, pi, mu)?;
        Ok(SampleCache {
            context_dim: b.context_dim,
            num_actions: b.num_actions,
            contexts: b.contexts,
            actions: b.actions,
            rewards: b.rewards,
            weights: b.weights,
            orders: b.orders,
        })
    }
}

/// `Σ_{i<j} p_i p_j |w_j − w_i|` by the pairwise definition.
pub fn pairwise_bias_term(p: &[f64], w: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            s += p[i] * p[j] * (w[j] - w[i]).abs();
        }
    }
    s
}

/// `G_a = Σ_j p_j |w_j − w_a|` for every `a`, via prefix sums over the
/// weight order. `Σ_{i<j} p_i p_j |w_j − w_i| = ½ Σ_a p_a G_a`.
fn absolute_deviation_sums(p: &[f64], w: &[f64], order: &[u32], out: &mut [f64]) {
    let total_p: f64 = p.iter().sum();
    let total_pw: f64 = p.iter().zip(w).map(|(p, w)| p * w).sum();
    let mut below_p = 0.0;
    let mut below_pw = 0.0;
    for &a in order {
        let a = a as usize;
        let wa = w[a];
        let above_p = total_p - below_p - p[a];
        let above_pw = total_pw - below_pw - p[a] * wa;
        out[a] = (wa * below_p - below_pw) + (above_pw - wa * above_p);
        below_p += p[a];
        below_pw += p[a] * wa;
    }
}

/// Collision probability `Σ p²`.
pub fn collision(p: &[f64]) -> f64 {
    dot(p, p)
}

/// Rényi entropy of order 2, `−log Σ p²`.
pub fn collision_entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("probability entries must be finite and non-negative"));
    }
    let c = collision(p);
    if c == 0.0 {
        return Err(Error::invalid("collision entropy of a zero vector is undefined"));
    }
    Ok(-libm::log(c))
}

/// Loss terms from explicit predictions and posterior rows (`rows × K`).
pub fn loss_terms(batch: &LossBatch, r_hat: &[f64], probs: &[f64], weights: LossWeights) -> LossBreakdown {
    let b = batch.len() as f64;
    let k = batch.num_actions;
    let l_r = r_hat.iter().zip(&batch.rewards).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / b;
    let mut bias_sum = 0.0;
    let mut var_sum = 0.0;
    for i in 0..batch.len() {
        let p = &probs[i * k..(i + 1) * k];
        let w = batch.weight_row(i);
        bias_sum += pairwise_bias_term(p, w);
        let r = if weights.variance_uses_logged_reward { batch.rewards[i] } else { r_hat[i] };
        var_sum += r * r * collision(p) * dot(w, w);
    }
    let mean_bias = bias_sum / b;
    let l_bias = mean_bias * mean_bias;
    let l_var = var_sum / (b * b);
    LossBreakdown {
        l_r,
        l_bias,
        l_var,
        total: l_r + weights.rho * l_bias + weights.gamma * l_var,
        rho: weights.rho,
        gamma: weights.gamma,
    }
}

/// Loss and `∂L/∂e` (`rows × d_e`) for one forward pass. The posterior's
/// parameters are fixed; the gradient flows through its embedding input.
pub fn loss_and_embedding_gradient(
    batch: &LossBatch,
    pass: &ForwardPass,
    posterior: &PosteriorModel,
    weights: LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let rows = batch.len();
    let d = batch.context_dim;
    let k = batch.num_actions;
    let emb = pass.output();
    let de = emb.len() / rows;
    if de != d {
        return Err(Error::invalid("embedding dimension must equal context dimension"));
    }
    if posterior.feature_dim() != d + de || posterior.num_actions() != k {
        return Err(Error::invalid("posterior shape does not match the batch"));
    }
    let r_hat: Vec<f64> = (0..rows).map(|i| dot(&emb[i * d..(i + 1) * d], batch.context(i))).collect();
    let features = batch.posterior_features(emb);
    let needs_posterior = weights.rho != 0.0 || weights.gamma != 0.0;
    let probs = if needs_posterior { posterior.probs_batch(&features, rows) } else { vec![1.0 / k as f64; rows * k] };

    let b = rows as f64;
    let k_w = weights;
    let mut g = vec![0.0; k];
    let mut bias_terms = vec![0.0; rows];
    let mut dev_sums = vec![0.0; rows * k];
    let mut coll = vec![0.0; rows];
    let mut wsq = vec![0.0; rows];
    let mut bias_sum = 0.0;
    let mut var_sum = 0.0;
    let mut l_r = 0.0;
    for i in 0..rows {
        let resid = r_hat[i] - batch.rewards[i];
        l_r += resid * resid;
        if !needs_posterior {
            continue;
        }
        let p = &probs[i * k..(i + 1) * k];
        let w = batch.weight_row(i);
        absolute_deviation_sums(p, w, &batch.orders[i * k..(i + 1) * k], &mut g);
        bias_terms[i] = 0.5 * dot(p, &g);
        dev_sums[i * k..(i + 1) * k].copy_from_slice(&g);
        bias_sum += bias_terms[i];
        coll[i] = collision(p);
        wsq[i] = dot(w, w);
        let r = if k_w.variance_uses_logged_reward { batch.rewards[i] } else { r_hat[i] };
        var_sum += r * r * coll[i] * wsq[i];
    }
    l_r /= b;
    let mean_bias = bias_sum / b;
    let l_bias = mean_bias * mean_bias;
    let l_var = var_sum / (b * b);
    let breakdown = LossBreakdown {
        l_r,
        l_bias,
        l_var,
        total: l_r + weights.rho * l_bias + weights.gamma * l_var,
        rho: weights.rho,
        gamma: weights.gamma,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("training loss is not finite".into()));
    }

    let mut d_emb = vec![0.0; rows * de];
    let mut d_probs = vec![0.0; rows * k];
    let bias_scale = weights.rho * 2.0 * mean_bias / b;
    let var_scale = weights.gamma / (b * b);
    for i in 0..rows {
        let x = batch.context(i);
        let mut dr = 2.0 * (r_hat[i] - batch.rewards[i]) / b;
        if needs_posterior {
            if !k_w.variance_uses_logged_reward {
                dr += var_scale * 2.0 * r_hat[i] * coll[i] * wsq[i];
            }
            let r = if k_w.variance_uses_logged_reward { batch.rewards[i] } else { r_hat[i] };
            let vcoef = var_scale * r * r * wsq[i] * 2.0;
            let p = &probs[i * k..(i + 1) * k];
            for a in 0..k {
                // ∂S/∂p_a = G_a, since S = ½ Σ_a p_a G_a is symmetric.
                d_probs[i * k + a] = bias_scale * dev_sums[i * k + a] + vcoef * p[a];
            }
        }
        for c in 0..de {
            d_emb[i * de + c] = dr * x[c];
        }
    }
    if needs_posterior {
        let d_feat = posterior.input_gradient(&probs, &d_probs, rows);
        let f = d + de;
        for i in 0..rows {
            for c in 0..de {
                d_emb[i * de + c] += d_feat[i * f + d + c];
            }
        }
    }
    Ok((breakdown, d_emb))
}

fn eval_pass(batch: &LossBatch, net: &EmbeddingNet) -> Result<ForwardPass> {
    net.forward::<crate::rng::TrialRng>(&batch.contexts, &batch.actions, None)
}

fn batch_probs(batch: &LossBatch, pass: &ForwardPass, posterior: &PosteriorModel) -> Vec<f64> {
    posterior.probs_batch(&batch.posterior_features(pass.output()), batch.len())
}

fn predictions(batch: &LossBatch, pass: &ForwardPass) -> Result<Vec<f64>> {
    let d = batch.context_dim;
    if pass.output().len() != batch.len() * d {
        return Err(Error::invalid("embedding dimension must equal context dimension"));
    }
    Ok((0..batch.len()).map(|i| dot(pass.embedding(i), batch.context(i))).collect())
}

/// `(1/B) Σ (r̂_i − r_i)²` with the network in its current mode (no dropout).
pub fn loss_reward(batch: &LossBatch, net: &EmbeddingNet) -> Result<f64> {
    let pass = eval_pass(batch, net)?;
    let r_hat = predictions(batch, &pass)?;
    Ok(r_hat.iter().zip(&batch.rewards).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / batch.len() as f64)
}

/// Squared batch mean of the pairwise bias bound.
pub fn loss_bias(batch: &LossBatch, net: &EmbeddingNet, posterior: &PosteriorModel) -> Result<f64> {
    let pass = eval_pass(batch, net)?;
    let probs = batch_probs(batch, &pass, posterior);
    let k = batch.num_actions;
    let s: f64 = (0..batch.len()).map(|i| pairwise_bias_term(&probs[i * k..(i + 1) * k], batch.weight_row(i))).sum();
    let m = s / batch.len() as f64;
    Ok(m * m)
}

/// `(1/B²) Σ r̂_i² Σ_a p_a² Σ_a w_a²`.
pub fn loss_var(batch: &LossBatch, net: &EmbeddingNet, posterior: &PosteriorModel) -> Result<f64> {
    let pass = eval_pass(batch, net)?;
    let r_hat = predictions(batch, &pass)?;
    let probs = batch_probs(batch, &pass, posterior);
    Ok(loss_terms(batch, &r_hat, &probs, LossWeights::new(0.0, 1.0)).l_var)
}

pub fn loss_total(
    batch: &LossBatch,
    net: &EmbeddingNet,
    posterior: &PosteriorModel,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let pass = eval_pass(batch, net)?;
    let r_hat = predictions(batch, &pass)?;
    let probs = batch_probs(batch, &pass, posterior);
    Ok(loss_terms(batch, &r_hat, &probs, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::net::{Mode, NetShape};
    use crate::oracle::finite_difference_gradient;
    use crate::rng::{RngSeed, TrialRng};
    use proptest::prelude::*;
    use rand::Rng;

    fn one_row(p_len: usize, w: &[f64], reward: f64) -> LossBatch {
        LossBatch::new(1, p_len, vec![1.0], vec![0], vec![reward], w.to_vec()).unwrap()
    }

    #[test]
    fn bias_hand_example() {
        let b = one_row(3, &[3.0, 1.0, 0.5], 0.0);
        let p = [0.5, 0.3, 0.2];
        let s = pairwise_bias_term(&p, b.weight_row(0));
        assert!((s * s - 0.3364).abs() < 1e-12);
        let l = loss_terms(&b, &[0.0], &p, LossWeights::new(1.0, 0.0));
        assert!((l.l_bias - 0.3364).abs() < 1e-12);
    }

    #[test]
    fn bias_vanishes_for_point_mass_and_constant_weights() {
        let b = one_row(3, &[3.0, 1.0, 0.5], 0.0);
        assert_eq!(loss_terms(&b, &[0.0], &[0.0, 1.0, 0.0], LossWeights::new(1.0, 0.0)).l_bias, 0.0);
        let c = one_row(3, &[1.0, 1.0, 1.0], 0.0);
        assert_eq!(loss_terms(&c, &[0.0], &[0.2, 0.3, 0.5], LossWeights::new(1.0, 0.0)).l_bias, 0.0);
    }

    #[test]
    fn variance_hand_example() {
        let b = one_row(2, &[2.0, 0.0], 0.0);
        let l = loss_terms(&b, &[2.0], &[1.0, 0.0], LossWeights::new(0.0, 1.0));
        assert_eq!(l.l_var, 16.0);
        assert_eq!(loss_terms(&b, &[0.0], &[1.0, 0.0], LossWeights::new(0.0, 1.0)).l_var, 0.0);
    }

    #[test]
    fn variance_flag_uses_logged_reward() {
        let b = one_row(2, &[2.0, 0.0], 3.0);
        let w = LossWeights { rho: 0.0, gamma: 1.0, variance_uses_logged_reward: true };
        assert_eq!(loss_terms(&b, &[2.0], &[1.0, 0.0], w).l_var, 36.0);
    }

    #[test]
    fn reward_loss_examples() {
        let b = LossBatch::new(1, 2, vec![1.0; 3], vec![0; 3], vec![2.0; 3], vec![1.0; 6]).unwrap();
        assert_eq!(loss_terms(&b, &[0.0; 3], &[0.5; 6], LossWeights::new(0.0, 0.0)).l_r, 4.0);
        assert_eq!(loss_terms(&b, &[2.0; 3], &[0.5; 6], LossWeights::new(0.0, 0.0)).l_r, 0.0);
    }

    #[test]
    fn total_combines_terms() {
        let l = LossBreakdown { l_r: 1.0, l_bias: 0.25, l_var: 2.0, total: 0.0, rho: 10.0, gamma: 0.1 };
        assert!((l.l_r + l.rho * l.l_bias + l.gamma * l.l_var - 3.7).abs() < 1e-12);
    }

    #[test]
    fn collision_entropy_examples() {
        assert!((collision_entropy(&[0.25; 4]).unwrap() - libm::log(4.0)).abs() < 1e-12);
        assert_eq!(collision_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((collision_entropy(&[0.5, 0.5]).unwrap() - libm::log(2.0)).abs() < 1e-12);
        assert!(collision_entropy(&[0.0, 0.0]).is_err());
        assert_eq!(collision(&[0.2; 5]), 0.2 * 0.2 * 5.0);
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn collision_lies_between_bounds(p in simplex(6)) {
            let c = collision(&p);
            prop_assert!((1.0 / 6.0 - 1e-12..=1.0 + 1e-12).contains(&c));
            prop_assert!((collision_entropy(&p).unwrap() + libm::log(c)).abs() < 1e-12);
        }

        #[test]
        fn entropy_is_monotone_in_collision(p in simplex(5), q in simplex(5)) {
            let (cp, cq) = (collision(&p), collision(&q));
            let (hp, hq) = (collision_entropy(&p).unwrap(), collision_entropy(&q).unwrap());
            prop_assert_eq!(cp <= cq, hp >= hq);
        }

        #[test]
        fn prefix_sums_match_pairwise(p in simplex(7), w in prop::collection::vec(0.0f64..5.0, 7), tie in any::<bool>()) {
            let mut w = w;
            if tie { w[3] = w[1]; w[5] = w[1]; }
            let order = sort_order(&w);
            let mut g = vec![0.0; 7];
            absolute_deviation_sums(&p, &w, &order, &mut g);
            let fast = 0.5 * dot(&p, &g);
            prop_assert!((fast - pairwise_bias_term(&p, &w)).abs() < 1e-12);
            for a in 0..7 {
                let direct: f64 = (0..7).map(|j| p[j] * (w[j] - w[a]).abs()).sum();
                prop_assert!((g[a] - direct).abs() < 1e-12);
            }
        }
    }

    fn fixture(rows: usize, seed: u64) -> (EmbeddingNet, PosteriorModel, LossBatch) {
        let (d, k) = (3, 4);
        let mut net = EmbeddingNet::new(NetShape { context_dim: d, num_actions: k, hidden: 8, output_dim: d }, 0.2, RngSeed(seed))
            .unwrap();
        let mut rng = RngSeed(seed + 1).rng();
        let contexts: Vec<f64> = (0..rows * d).map(|_| rng.random::<f64>()).collect();
        let actions: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
        let rewards: Vec<f64> = (0..rows).map(|_| rng.random_range(0.0..3.0)).collect();
        let weights: Vec<f64> = (0..rows * k).map(|_| rng.random_range(0.0..4.0)).collect();
        let warm = net.forward::<TrialRng>(&contexts, &actions, None).unwrap();
        net.update_running_stats(&warm);
        net.set_mode(Mode::Eval);
        let pw: Vec<f64> = (0..2 * d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = PosteriorModel::from_parts(2 * d, k, pw, vec![0.1, 0.0, -0.1, 0.2]).unwrap();
        (net, post, LossBatch::new(d, k, contexts, actions, rewards, weights).unwrap())
    }

    #[test]
    fn public_losses_agree_with_gradient_path() {
        let (net, post, batch) = fixture(6, 3);
        let w = LossWeights::new(10.0, 0.1);
        let pass = net.forward::<TrialRng>(batch.contexts(), batch.actions(), None).unwrap();
        let (fast, _) = loss_and_embedding_gradient(&batch, &pass, &post, w).unwrap();
        let total = loss_total(&batch, &net, &post, w).unwrap();
        assert!((fast.l_bias - loss_bias(&batch, &net, &post).unwrap()).abs() < 1e-12);
        assert!((fast.l_var - loss_var(&batch, &net, &post).unwrap()).abs() < 1e-12);
        assert_eq!(fast.l_r, loss_reward(&batch, &net).unwrap());
        assert!((fast.total - total.total).abs() < 1e-12);
    }

    #[test]
    fn reward_loss_matches_independent_sum() {
        let (net, _, batch) = fixture(9, 5);
        let mut direct = 0.0;
        for i in 0..batch.len() {
            let x = crate::policy::ContextVector::new(batch.context(i).to_vec()).unwrap();
            let p = net.predict_reward(&x, crate::policy::ActionId(batch.actions()[i])).unwrap();
            direct += (p - batch.rewards()[i]).powi(2);
        }
        assert!((loss_reward(&batch, &net).unwrap() - direct / 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_reduce_to_reward_loss() {
        let (net, post, batch) = fixture(5, 8);
        let l = loss_total(&batch, &net, &post, LossWeights::new(0.0, 0.0)).unwrap();
        assert_eq!(l.total.to_bits(), loss_reward(&batch, &net).unwrap().to_bits());
    }

    #[test]
    fn bias_loss_is_zero_when_target_equals_behavior() {
        let (net, post, batch) = fixture(5, 8);
        let ones = LossBatch::new(3, 4, batch.contexts().to_vec(), batch.actions().to_vec(), batch.rewards().to_vec(), vec![1.0; 20])
            .unwrap();
        assert_eq!(loss_bias(&ones, &net, &post).unwrap(), 0.0);
    }

    #[test]
    fn saturated_posterior_gives_exact_zero_bias() {
        let (net, _, batch) = fixture(5, 8);
        let post = PosteriorModel::from_parts(6, 4, vec![0.0; 24], vec![1e6, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(loss_bias(&batch, &net, &post).unwrap(), 0.0);
    }

    fn check_full_gradient(weights: LossWeights, seed: u64) {
        let (net, post, batch) = fixture(5, seed);
        let loss = |params: &[f64]| {
            let pass = net.forward_with::<TrialRng>(params, batch.contexts(), batch.actions(), None).unwrap();
            loss_and_embedding_gradient(&batch, &pass, &post, weights).unwrap().0.total
        };
        let pass = net.forward::<TrialRng>(batch.contexts(), batch.actions(), None).unwrap();
        let (_, d_emb) = loss_and_embedding_gradient(&batch, &pass, &post, weights).unwrap();
        let analytic = net.backward(&pass, &d_emb);
        let numeric = finite_difference_gradient(loss, net.params(), 1e-5).unwrap();
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {a}, numeric {n}");
        }
    }

    #[test]
    fn gradient_of_each_term_matches_finite_differences() {
        check_full_gradient(LossWeights::new(0.0, 0.0), 21);
        check_full_gradient(LossWeights::new(1.0, 0.0), 22);
        check_full_gradient(LossWeights::new(0.0, 1.0), 23);
        check_full_gradient(LossWeights { rho: 0.0, gamma: 1.0, variance_uses_logged_reward: true }, 24);
        check_full_gradient(LossWeights::new(10.0, 0.1), 25);
    }
}
