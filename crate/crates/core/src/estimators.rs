//! Point estimators of `v(π)` from logged data.
//!
//! Weights are used as-is: no clipping and no self-normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LoggedSample};
use crate::error::{Error, Result};
use crate::oracle::DiscreteInstance;
use crate::policy::{ActionId, ActionValue, ContextVector, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub value: f64,
    pub estimator_name: String,
    pub n: usize,
}

impl EstimateReport {
    fn new(name: &str, value: f64, n: usize) -> Self {
        EstimateReport { value, estimator_name: String::from(name), n }
    }
}

/// Any model of `μ(a | x, e)`.
pub trait ActionPosterior {
    fn posterior(&self, x: &ContextVector, e: &[f64]) -> Vec<f64>;
}

/// Per-sample marginal weights `w(x_i, e_i) = Σ_a μ̂(a|x_i,e_i) w(x_i,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalWeightTable {
    pub weights: Vec<f64>,
}

pub fn ips_estimate<P: Policy + ?Sized>(data: &Dataset, pi: &P) -> Result<EstimateReport> {
    data.require_non_empty()?;
    let mut total = 0.0;
    for s in data.samples() {
        if s.behavior_propensity <= 0.0 {
            return Err(Error::UnsupportedAction { action: s.action.index() });
        }
        total += pi.prob(&s.context, s.action) / s.behavior_propensity * s.reward;
    }
    Ok(EstimateReport::new("IPS", total / data.len() as f64, data.len()))
}

/// Direct method with a reward model that predicts every action of a context
/// at once.
pub fn dm_estimate_with<P, F>(contexts: &[ContextVector], pi: &P, mut predict_all: F) -> Result<EstimateReport>
where
    P: Policy + ?Sized,
    F: FnMut(&ContextVector) -> Vec<f64>,
{
    if contexts.is_empty() {
        return Err(Error::invalid("no contexts to average over"));
    }
    let mut total = 0.0;
    for x in contexts {
        let probs = pi.probs(x);
        let q = predict_all(x);
        if q.len() != probs.len() {
            return Err(Error::invalid(format!(
                "reward model returned {} predictions for {} actions",
                q.len(),
                probs.len()
            )));
        }
        total += probs.iter().zip(&q).map(|(p, q)| p * q).sum::<f64>();
    }
    Ok(EstimateReport::new("DM", total / contexts.len() as f64, contexts.len()))
}

/// `(1/n) Σ_i Σ_a π(a|x_i) q̂(x_i, a)`.
pub fn dm_estimate<P, Q>(contexts: &[ContextVector], pi: &P, q_hat: &Q, num_actions: usize) -> Result<EstimateReport>
where
    P: Policy + ?Sized,
    Q: ActionValue + ?Sized,
{
    dm_estimate_with(contexts, pi, |x| (0..num_actions).map(|a| q_hat.value(x, ActionId(a))).collect())
}

/// `w(x_i, a)` for every action, using the logged propensity for the logged
/// action and `mu` for the rest. Entries where the behavior probability is
/// zero are `None`.
pub fn sample_weight_row<P, M>(sample: &LoggedSample, pi: &P, mu: &M) -> Vec<Option<f64>>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    let target = pi.probs(&sample.context);
    let behavior = mu.probs(&sample.context);
    target
        .iter()
        .zip(&behavior)
        .enumerate()
        .map(|(a, (&p, &m))| {
            let m = if a == sample.action.index() { sample.behavior_propensity } else { m };
            (m > 0.0).then(|| p / m)
        })
        .collect()
}

/// Marginal weights from per-sample posterior vectors.
pub fn marginal_weights_from_probs<P, M>(
    data: &Dataset,
    pi: &P,
    mu: &M,
    posteriors: &[Vec<f64>],
) -> Result<MarginalWeightTable>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    if posteriors.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} posterior rows for {} samples",
            posteriors.len(),
            data.len()
        )));
    }
    let mut weights = Vec::with_capacity(data.len());
    for (s, post) in data.samples().iter().zip(posteriors) {
        if post.len() != data.num_actions() {
            return Err(Error::invalid("posterior row has the wrong number of actions"));
        }
        let row = sample_weight_row(s, pi, mu);
        let mut w = 0.0;
        for (a, (p, wa)) in post.iter().zip(&row).enumerate() {
            match wa {
                Some(wa) => w += p * wa,
                None if *p > 0.0 => return Err(Error::UnsupportedAction { action: a }),
                None => {}
            }
        }
        weights.push(w);
    }
    Ok(MarginalWeightTable { weights })
}

/// Marginal weights with a posterior model evaluated at per-sample embeddings.
pub fn marginal_weights<P, M, Q>(
    data: &Dataset,
    pi: &P,
    mu: &M,
    posterior: &Q,
    embeddings: &[Vec<f64>],
) -> Result<MarginalWeightTable>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
    Q: ActionPosterior + ?Sized,
{
    if embeddings.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} embeddings for {} samples",
            embeddings.len(),
            data.len()
        )));
    }
    let posteriors: Vec<Vec<f64>> = data
        .samples()
        .iter()
        .zip(embeddings)
        .map(|(s, e)| posterior.posterior(&s.context, e))
        .collect();
    marginal_weights_from_probs(data, pi, mu, &posteriors)
}

/// `(1/n) Σ_i w(x_i, e_i) r_i`.
pub fn mips_estimate(data: &Dataset, weights: &MarginalWeightTable) -> Result<EstimateReport> {
    data.require_non_empty()?;
    if weights.weights.len() != data.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} samples",
            weights.weights.len(),
            data.len()
        )));
    }
    let total: f64 = data.samples().iter().zip(&weights.weights).map(|(s, w)| w * s.reward).sum();
    Ok(EstimateReport::new("MIPS", total / data.len() as f64, data.len()))
}

/// The three terms of `V[v̂_IPS]` for datasets of size `n`:
/// `(1/n) E[w² V[R|X,A]]`, `(1/n) V[E_μ[w q]]` and `(1/n) E[V_μ[w q]]`.
pub fn ips_variance_terms(inst: &DiscreteInstance, n: usize) -> Result<[f64; 3]> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let nf = n as f64;
    let mut noise = 0.0;
    let mut between_first = 0.0;
    let mut between_second = 0.0;
    let mut within = 0.0;
    for x in 0..inst.num_contexts() {
        let px = inst.context_prob(x);
        let mut mean = 0.0;
        let mut second = 0.0;
        for a in 0..inst.num_actions() {
            let m = inst.behavior()[x][a];
            if m <= 0.0 {
                continue;
            }
            let w = inst.target()[x][a] / m;
            let q = inst.mean_reward(x, a);
            let var_r = inst.reward_second_moment(x, a) - q * q;
            noise += px * m * w * w * var_r;
            mean += m * w * q;
            second += m * (w * q) * (w * q);
        }
        between_first += px * mean;
        between_second += px * mean * mean;
        within += px * (second - mean * mean);
    }
    let between = between_second - between_first * between_first;
    Ok([noise / nf, between / nf, within / nf])
}

/// `E[Σ_{a ∈ U(X,μ)} π(a|X) q(X,a)]`: the IPS bias magnitude from actions
/// the behavior policy never takes.
pub fn ips_bias_unsupported(inst: &DiscreteInstance) -> f64 {
    let mut total = 0.0;
    for x in 0..inst.num_contexts() {
        for a in 0..inst.num_actions() {
            if inst.behavior()[x][a] == 0.0 {
                total += inst.context_prob(x) * inst.target()[x][a] * inst.mean_reward(x, a);
            }
        }
    }
    total
}
