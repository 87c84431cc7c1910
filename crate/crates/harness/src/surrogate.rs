//! Synthetic stand-in for the Open Bandit Dataset, written in its CSV
//! layout so the `obd` path can run without the real download.
//!
//! Contexts and the reward surface come from the synthetic environment;
//! clicks are Bernoulli with probability `q(x, a) / REWARD_SCALE`. The
//! logging policy is uniform and the target policy is epsilon-greedy.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cael_core::synthetic::{SyntheticEnv, REWARD_SCALE};
use cael_core::{ActionId, ContextVector, Policy, RngSeed};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_error, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSpec {
    pub rows: usize,
    pub on_policy_rows: usize,
    pub context_dim: usize,
    pub num_actions: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec { rows: 10_000, on_policy_rows: 200_000, context_dim: 5, num_actions: 100, epsilon: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateFiles {
    pub data: PathBuf,
    pub on_policy: PathBuf,
    pub target_probs: PathBuf,
    pub mapping: PathBuf,
}

/// Writes `data.csv`, `on_policy.csv`, `target_probs.csv` and
/// `mapping.json` into `dir`.
pub fn write_surrogate(dir: &Path, spec: &SurrogateSpec) -> Result<SurrogateFiles> {
    if spec.rows == 0 || spec.on_policy_rows == 0 {
        return Err(HarnessError::Config("surrogate row counts must be positive".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let root = RngSeed(spec.seed);
    let env = SyntheticEnv::new(spec.context_dim, spec.num_actions, 0.0, root.derive(0))?;
    let target = env.target_policy(spec.epsilon)?;
    let k = spec.num_actions;
    let files = SurrogateFiles {
        data: dir.join("data.csv"),
        on_policy: dir.join("on_policy.csv"),
        target_probs: dir.join("target_probs.csv"),
        mapping: dir.join("mapping.json"),
    };

    let header = {
        let mut h = vec!["item_id".to_string(), "click".into(), "propensity_score".into()];
        h.extend((0..spec.context_dim).map(|j| format!("x{j}")));
        h.join(",")
    };
    let write_row = |w: &mut BufWriter<File>, x: &ContextVector, a: usize, click: bool, p: f64| -> std::io::Result<()> {
        write!(w, "{a},{},{p}", u8::from(click))?;
        for v in x.as_slice() {
            write!(w, ",{v}")?;
        }
        writeln!(w)
    };
    let click = |rng: &mut cael_core::rng::TrialRng, x: &ContextVector, a: usize| {
        rng.random::<f64>() < env.expected_reward(x, ActionId(a)) / REWARD_SCALE
    };

    let mut rng = root.derive(1).rng();
    let mut data = BufWriter::new(File::create(&files.data).map_err(|e| io_error(&files.data, e))?);
    let mut probs = BufWriter::new(File::create(&files.target_probs).map_err(|e| io_error(&files.target_probs, e))?);
    let probs_header: Vec<String> = std::iter::once("key".to_string()).chain((0..k).map(|a| format!("p{a}"))).collect();
    (|| -> std::io::Result<()> {
        writeln!(data, "{header}")?;
        writeln!(probs, "{}", probs_header.join(","))?;
        for i in 0..spec.rows {
            let x = env.sample_context(&mut rng);
            let a = rng.random_range(0..k);
            let c = click(&mut rng, &x, a);
            write_row(&mut data, &x, a, c, 1.0 / k as f64)?;
            write!(probs, "{i}")?;
            for p in target.probs(&x) {
                write!(probs, ",{p}")?;
            }
            writeln!(probs)?;
        }
        data.flush()?;
        probs.flush()
    })()
    .map_err(|e| io_error(dir, e))?;

    let mut rng = root.derive(2).rng();
    let mut on = BufWriter::new(File::create(&files.on_policy).map_err(|e| io_error(&files.on_policy, e))?);
    (|| -> std::io::Result<()> {
        writeln!(on, "{header}")?;
        for _ in 0..spec.on_policy_rows {
            let x = env.sample_context(&mut rng);
            let p = target.probs(&x);
            let a = sample_action(&p, rng.random());
            let c = click(&mut rng, &x, a);
            write_row(&mut on, &x, a, c, p[a])?;
        }
        on.flush()
    })()
    .map_err(|e| io_error(dir, e))?;

    let mapping = serde_json::json!({
        "action_column": "item_id",
        "reward_column": "click",
        "propensity_column": "propensity_score",
        "num_actions": k,
        "context_dim": spec.context_dim,
        "context_columns": (0..spec.context_dim).map(|j| format!("x{j}")).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&mapping).expect("json value serializes");
    fs::write(&files.mapping, text + "\n").map_err(|e| io_error(&files.mapping, e))?;
    Ok(files)
}

fn sample_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_action_inverts_the_cdf() {
        let p = [0.2, 0.5, 0.3];
        assert_eq!(sample_action(&p, 0.0), 0);
        assert_eq!(sample_action(&p, 0.19), 0);
        assert_eq!(sample_action(&p, 0.2), 1);
        assert_eq!(sample_action(&p, 0.69), 1);
        assert_eq!(sample_action(&p, 0.99), 2);
    }
}
