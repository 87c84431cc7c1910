//! One experiment trial: draw (or receive) a dataset, train the embedding
//! models and evaluate every requested estimator.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{dm_estimate_with, ips_estimate};
use crate::models::{cael_mips_estimate, train_embeddings, TrainConfig, TrainedModels};
use crate::policy::{uniform_policy, ContextVector, Policy};
use crate::rng::RngSeed;
use crate::synthetic::SyntheticEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "IPS")]
    Ips,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "AEL-MIPS")]
    AelMips,
    #[serde(rename = "CAEL-MIPS")]
    CaelMips,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] =
        [EstimatorKind::Ips, EstimatorKind::Dm, EstimatorKind::AelMips, EstimatorKind::CaelMips];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ips => "IPS",
            EstimatorKind::Dm => "DM",
            EstimatorKind::AelMips => "AEL-MIPS",
            EstimatorKind::CaelMips => "CAEL-MIPS",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(alloc::format!("unknown estimator {s}")))
    }
}

/// What to estimate and how to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSettings {
    pub estimators: Vec<EstimatorKind>,
    /// CAEL training configuration; AEL uses the same with `ρ = γ = 0`.
    pub train: TrainConfig,
    /// Use the reward-only network for DM instead of the CAEL network.
    pub independent_dm: bool,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        EstimationSettings { estimators: EstimatorKind::ALL.to_vec(), train: TrainConfig::default(), independent_dm: false }
    }
}

/// Estimates of one trial, in the order of the requested estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_seed: RngSeed,
    pub values: Vec<(EstimatorKind, f64)>,
}

impl TrialOutcome {
    pub fn value(&self, kind: EstimatorKind) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == kind).map(|(_, v)| *v)
    }
}

fn dm_value<P: Policy + ?Sized>(data: &Dataset, pi: &P, models: &TrainedModels) -> Result<f64> {
    let contexts: Vec<ContextVector> = data.samples().iter().map(|s| s.context.clone()).collect();
    let mut failure = None;
    let report = dm_estimate_with(&contexts, pi, |x| match models.net.predict_all_actions(x) {
        Ok(v) => v,
        Err(e) => {
            failure = Some(e);
            alloc::vec![0.0; data.num_actions()]
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report.value),
    }
}

/// Runs every requested estimator on one dataset. Both embedding models
/// start from the same seed `train_seed`.
pub fn estimate_all<P, M>(
    data: &Dataset,
    pi: &P,
    mu: &M,
    settings: &EstimationSettings,
    train_seed: RngSeed,
) -> Result<Vec<(EstimatorKind, f64)>>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    let wants = |k| settings.estimators.contains(&k);
    let cfg = TrainConfig { seed: train_seed, ..settings.train.clone() };
    let need_cael = wants(EstimatorKind::CaelMips) || (wants(EstimatorKind::Dm) && !settings.independent_dm);
    let need_ael = wants(EstimatorKind::AelMips) || (wants(EstimatorKind::Dm) && settings.independent_dm);
    let cael = if need_cael { Some(train_embeddings(data, pi, mu, &cfg)?) } else { None };
    let ael = if need_ael { Some(train_embeddings(data, pi, mu, &cfg.reward_only())?) } else { None };

    let mut out = Vec::with_capacity(settings.estimators.len());
    for &kind in &settings.estimators {
        let v = match kind {
            EstimatorKind::Ips => ips_estimate(data, pi)?.value,
            EstimatorKind::Dm => {
                let m = if settings.independent_dm { &ael } else { &cael };
                dm_value(data, pi, m.as_ref().expect("trained above"))?
            }
            EstimatorKind::AelMips => {
                let m = ael.as_ref().expect("trained above");
                cael_mips_estimate(data, pi, mu, &m.net, &m.posterior)?.value
            }
            EstimatorKind::CaelMips => {
                let m = cael.as_ref().expect("trained above");
                cael_mips_estimate(data, pi, mu, &m.net, &m.posterior)?.value
            }
        };
        out.push((kind, v));
    }
    Ok(out)
}

/// Parameters of the synthetic environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSettings {
    pub context_dim: usize,
    pub num_actions: usize,
    pub epsilon: f64,
    pub reward_std: f64,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings { context_dim: 5, num_actions: 100, epsilon: 0.2, reward_std: 1.0 }
    }
}

/// A synthetic environment with its target and uniform behavior policy.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    pub env: SyntheticEnv,
    pub target: crate::synthetic::SyntheticTarget,
    pub behavior: crate::policy::UniformPolicy,
}

impl SyntheticProblem {
    pub fn new(settings: &EnvSettings, seed: RngSeed) -> Result<Self> {
        let env = SyntheticEnv::new(settings.context_dim, settings.num_actions, settings.reward_std, seed)?;
        let target = env.target_policy(settings.epsilon)?;
        let behavior = uniform_policy(settings.num_actions)?;
        Ok(SyntheticProblem { env, target, behavior })
    }
}

/// Dataset of size `n` drawn with `trial_seed.derive(0)`; models trained
/// with `trial_seed.derive(1)`.
pub fn run_trial(
    problem: &SyntheticProblem,
    n: usize,
    settings: &EstimationSettings,
    trial_seed: RngSeed,
) -> Result<TrialOutcome> {
    let data = problem.env.generate_dataset(&problem.behavior, n, trial_seed.derive(0))?;
    let values = estimate_all(&data, &problem.target, &problem.behavior, settings, trial_seed.derive(1))?;
    Ok(TrialOutcome { trial_seed, values })
}

/// Seed of trial `index` under an experiment seed.
pub fn trial_seed(experiment_seed: RngSeed, index: usize) -> RngSeed {
    experiment_seed.derive(index as u64)
}

/// Failure description kept for the trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_seed: RngSeed,
    pub reason: String,
}
