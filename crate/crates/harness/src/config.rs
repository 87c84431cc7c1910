//! Experiment configuration: JSON file, presets and command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use cael_core::models::TrainConfig;
use cael_core::trial::{EnvSettings, EstimationSettings, EstimatorKind};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    N,
    NumActions,
    Epsilon,
    RewardStd,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::NumActions => "num_actions",
            SweepParam::Epsilon => "epsilon",
            SweepParam::RewardStd => "reward_std",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepParam::N),
            "num_actions" => Ok(SweepParam::NumActions),
            "epsilon" => Ok(SweepParam::Epsilon),
            "reward_std" => Ok(SweepParam::RewardStd),
            other => Err(HarnessError::Config(format!(
                "unknown sweep parameter {other} (expected n, num_actions, epsilon or reward_std)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    /// Trials per grid value; defaults to 100 for `n` and to the
    /// experiment's trial count otherwise.
    #[serde(default)]
    pub trials: Option<usize>,
}

impl SweepSpec {
    pub fn trials_per_value(&self, default_trials: usize) -> usize {
        self.trials.unwrap_or(match self.param {
            SweepParam::N => 100,
            _ => default_trials,
        })
    }
}

/// Inputs of an `obd` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObdConfig {
    pub data: PathBuf,
    pub mapping: Option<PathBuf>,
    pub target_probs: PathBuf,
    /// Log collected under the target policy; its mean reward is the
    /// ground truth.
    #[serde(default)]
    pub on_policy: Option<PathBuf>,
    /// Explicit ground truth, used when no on-policy log is given.
    #[serde(default)]
    pub ground_truth: Option<f64>,
    /// Rows read from the data file.
    #[serde(default)]
    pub max_rows: Option<usize>,
    /// Samples drawn (without replacement) for each run.
    pub sample_size: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSettings,
    pub n: usize,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub train: TrainConfig,
    /// DM uses the reward-only network instead of the CAEL one.
    pub independent_dm: bool,
    /// Monte Carlo contexts for the ground-truth value.
    pub ground_truth_mc: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub sweep: Option<SweepSpec>,
    pub output_dir: Option<PathBuf>,
    pub obd: Option<ObdConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(HarnessError::Config(format!("unknown preset {other} (expected desk or full)"))),
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Full => ExperimentConfig::full(),
        }
    }
}

impl ExperimentConfig {
    /// 100 actions, 30 trials and a lighter network, sized for one CPU core.
    pub fn desk() -> Self {
        ExperimentConfig {
            env: EnvSettings::default(),
            n: 1000,
            trials: 30,
            estimators: EstimatorKind::ALL.to_vec(),
            train: TrainConfig { hidden: 64, iterations: 1000, learning_rate: 1e-2, ..TrainConfig::default() },
            independent_dm: false,
            ground_truth_mc: 200_000,
            seed: 0,
            bootstrap_resamples: cael_core::metrics::BOOTSTRAP_RESAMPLES,
            sweep: None,
            output_dir: None,
            obd: None,
        }
    }

    /// 500 actions and the full-size network.
    pub fn full() -> Self {
        ExperimentConfig {
            env: EnvSettings { num_actions: 500, ..EnvSettings::default() },
            train: TrainConfig::default(),
            ground_truth_mc: 1_000_000,
            ..ExperimentConfig::desk()
        }
    }

    /// Reads a JSON file; missing fields take the values of `base`.
    pub fn from_file(path: &Path, base: ExperimentConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut value = serde_json::to_value(&base).map_err(|e| HarnessError::Config(e.to_string()))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, overlay);
        serde_json::from_value(value).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn estimation(&self) -> EstimationSettings {
        EstimationSettings {
            estimators: self.estimators.clone(),
            train: self.train.clone(),
            independent_dm: self.independent_dm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.trials < 2 {
            return bad("trials must be at least 2 (bias and variance need two values)");
        }
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected");
        }
        if self.env.context_dim == 0 || self.env.num_actions == 0 {
            return bad("context dimension and number of actions must be positive");
        }
        if !(0.0..=1.0).contains(&self.env.epsilon) {
            return bad("epsilon must be in [0, 1]");
        }
        if !(self.env.reward_std >= 0.0 && self.env.reward_std.is_finite()) {
            return bad("reward_std must be finite and non-negative");
        }
        if self.ground_truth_mc == 0 {
            return bad("ground_truth_mc must be positive");
        }
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep values must be non-empty");
            }
            for &v in &s.values {
                let ok = match s.param {
                    SweepParam::N | SweepParam::NumActions => v >= 1.0 && v.fract() == 0.0,
                    SweepParam::Epsilon => (0.0..=1.0).contains(&v),
                    SweepParam::RewardStd => v >= 0.0 && v.is_finite(),
                };
                if !ok {
                    return bad(&format!("invalid {} sweep value {v}", s.param.name()));
                }
            }
            if matches!(s.trials, Some(t) if t < 2) {
                return bad("sweep trials must be at least 2");
            }
        }
        if let Some(o) = &self.obd {
            if o.runs < 2 || o.sample_size == 0 {
                return bad("obd needs at least two runs and a positive sample_size");
            }
        }
        Ok(())
    }

    /// Copy of the config at one sweep grid value.
    pub fn at_sweep_value(&self, param: SweepParam, value: f64) -> ExperimentConfig {
        let mut c = self.clone();
        match param {
            SweepParam::N => c.n = value as usize,
            SweepParam::NumActions => c.env.num_actions = value as usize,
            SweepParam::Epsilon => c.env.epsilon = value,
            SweepParam::RewardStd => c.env.reward_std = value,
        }
        c
    }
}

/// Recursive object merge; non-object values in `overlay` replace.
fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
