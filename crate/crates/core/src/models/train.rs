//! Alternating training of the embedding network and the action posterior,
//! and the resulting marginalized estimate.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_embedding_gradient, LossBatch, LossBreakdown, LossWeights, SampleCache};
use super::net::{EmbeddingNet, Mode, NetShape};
use super::posterior::{PosteriorConfig, PosteriorModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{marginal_weights_from_probs, mips_estimate, EstimateReport};
use crate::policy::Policy;
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub rho: f64,
    pub gamma: f64,
    pub seed: RngSeed,
    /// Warm-started posterior epochs on each minibatch.
    pub posterior_refit_epochs: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub variance_uses_logged_reward: bool,
    pub posterior: PosteriorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-3,
            iterations: 2000,
            rho: 10.0,
            gamma: 0.1,
            seed: RngSeed(0),
            posterior_refit_epochs: 5,
            hidden: 128,
            dropout: 0.2,
            variance_uses_logged_reward: false,
            posterior: PosteriorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Same configuration with the bias and variance terms switched off.
    pub fn reward_only(&self) -> TrainConfig {
        TrainConfig { rho: 0.0, gamma: 0.0, ..self.clone() }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { rho: self.rho, gamma: self.gamma, variance_uses_logged_reward: self.variance_uses_logged_reward }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.posterior.batch_size == 0 {
            return Err(Error::invalid("batch sizes and hidden width must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.rho >= 0.0 && self.gamma >= 0.0 && self.rho.is_finite() && self.gamma.is_finite()) {
            return Err(Error::invalid("rho and gamma must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout rate must be in [0, 1)"));
        }
        if self.posterior.l2 < 0.0 {
            return Err(Error::invalid("posterior L2 penalty must be non-negative"));
        }
        Ok(())
    }
}

/// Trained models plus the loss of every iteration.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub net: EmbeddingNet,
    pub posterior: PosteriorModel,
    pub history: Vec<LossBreakdown>,
}

/// Eval-mode embeddings of every logged `(x_i, a_i)`, `n × d_e`.
pub fn dataset_embeddings(net: &EmbeddingNet, data: &Dataset) -> Result<Vec<f64>> {
    let mut xs = Vec::with_capacity(data.len() * data.context_dim());
    let mut actions = Vec::with_capacity(data.len());
    for s in data.samples() {
        xs.extend_from_slice(s.context.as_slice());
        actions.push(s.action.index());
    }
    net.embed_batch(&xs, &actions)
}

fn posterior_features(data: &Dataset, embeddings: &[f64]) -> Vec<f64> {
    let de = embeddings.len() / data.len();
    let mut f = Vec::with_capacity(data.len() * (data.context_dim() + de));
    for (i, s) in data.samples().iter().enumerate() {
        f.extend_from_slice(s.context.as_slice());
        f.extend_from_slice(&embeddings[i * de..(i + 1) * de]);
    }
    f
}

pub fn train_embeddings<P, M>(data: &Dataset, pi: &P, mu: &M, config: &TrainConfig) -> Result<TrainedModels>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    config.validate()?;
    data.require_non_empty()?;
    let d = data.context_dim();
    let k = data.num_actions();
    let shape = NetShape { context_dim: d, num_actions: k, hidden: config.hidden, output_dim: d };
    let mut net = EmbeddingNet::new(shape, config.dropout, config.seed.derive(0))?;
    let mut posterior = PosteriorModel::new(2 * d, k)?;
    let mut rng = config.seed.derive(1).rng();
    let cache = SampleCache::new(data, pi, mu)?;
    let weights = config.loss_weights();
    let uses_posterior = weights.rho != 0.0 || weights.gamma != 0.0;
    let batch_size = config.batch_size.min(data.len());
    let mut history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let indices = sample(&mut rng, data.len(), batch_size).into_vec();
        let batch = LossBatch::gather(&cache, &indices);
        let pass = net.forward(batch.contexts(), batch.actions(), Some(&mut rng))?;
        if uses_posterior {
            let features = batch.posterior_features(pass.output());
            posterior.train_epochs(&features, batch.actions(), config.posterior_refit_epochs, &config.posterior, &mut rng)?;
        }
        let (loss, d_emb) = loss_and_embedding_gradient(&batch, &pass, &posterior, weights).map_err(|e| match e {
            Error::NonFinite(_) => Error::NonFinite(diverged(it, history.last())),
            other => other,
        })?;
        let grad = net.backward(&pass, &d_emb);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(diverged(it, Some(&loss))));
        }
        net.update_running_stats(&pass);
        for (p, g) in net.params_mut().iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        history.push(loss);
    }

    net.set_mode(Mode::Eval);
    let embeddings = dataset_embeddings(&net, data)?;
    let features = posterior_features(data, &embeddings);
    let labels: Vec<usize> = data.samples().iter().map(|s| s.action.index()).collect();
    let mut posterior = PosteriorModel::new(2 * d, k)?;
    posterior.train_to_convergence(&features, &labels, &config.posterior)?;
    Ok(TrainedModels { net, posterior, history })
}

fn diverged(iteration: usize, last: Option<&LossBreakdown>) -> String {
    match last {
        Some(l) => format!(
            "loss diverged at iteration {iteration} (last finite: l_r={:.4e}, l_bias={:.4e}, l_var={:.4e}); lower the learning rate",
            l.l_r, l.l_bias, l.l_var
        ),
        None => format!("loss diverged at iteration {iteration}; lower the learning rate"),
    }
}

/// Marginalized estimate with the posterior evaluated at the network's
/// embeddings of the logged pairs.
pub fn cael_mips_estimate<P, M>(
    data: &Dataset,
    pi: &P,
    mu: &M,
    net: &EmbeddingNet,
    posterior: &PosteriorModel,
) -> Result<EstimateReport>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    data.require_non_empty()?;
    let embeddings = dataset_embeddings(net, data)?;
    let features = posterior_features(data, &embeddings);
    if features.len() != data.len() * posterior.feature_dim() {
        return Err(Error::invalid("posterior feature dimension does not match the embeddings"));
    }
    let probs = posterior.probs_batch(&features, data.len());
    let rows: Vec<Vec<f64>> = probs.chunks(data.num_actions()).map(<[f64]>::to_vec).collect();
    let table = marginal_weights_from_probs(data, pi, mu, &rows)?;
    let mut report = mips_estimate(data, &table)?;
    report.estimator_name = String::from("CAEL-MIPS");
    Ok(report)
}
