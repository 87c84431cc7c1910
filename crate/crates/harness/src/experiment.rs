//! Synthetic experiments: one grid point or a sweep, trials in parallel.

use std::collections::BTreeMap;

use cael_core::metrics::{aggregate_with, relative_error_cdf, MetricsRow, RelativeErrorCdf};
use cael_core::synthetic::GroundTruth;
use cael_core::trial::{run_trial, trial_seed, EstimatorKind, SyntheticProblem, TrialFailure, TrialOutcome};
use cael_core::RngSeed;
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepParam};
use crate::error::{HarnessError, Result};

// Stream indices far above any trial index, so the environment and the
// ground truth never share a generator with a trial.
pub(crate) const ENV_STREAM: u64 = 1 << 48;
const TRUTH_STREAM: u64 = (1 << 48) + 1;
const BOOTSTRAP_STREAM: u64 = (1 << 48) + 2;

/// All trials at one grid value.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub sweep_value: f64,
    pub truth: GroundTruth,
    pub outcomes: Vec<TrialOutcome>,
    pub failures: Vec<TrialFailure>,
}

impl PointResult {
    /// Per-estimator values in trial order.
    pub fn values(&self, kind: EstimatorKind) -> Vec<f64> {
        self.outcomes.iter().filter_map(|o| o.value(kind)).collect()
    }

    /// Squared errors keyed by trial seed.
    pub fn squared_errors(&self) -> BTreeMap<String, BTreeMap<u64, f64>> {
        let mut out: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
        for o in &self.outcomes {
            for &(kind, v) in &o.values {
                let e = v - self.truth.value;
                out.entry(kind.name().to_string()).or_default().insert(o.trial_seed.0, e * e);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub sweep_param: String,
    pub points: Vec<PointResult>,
    pub rows: Vec<MetricsRow>,
    /// Squared errors relative to IPS; only for single-point runs that
    /// include IPS.
    pub cdf: Option<RelativeErrorCdf>,
}

/// Runs the configured experiment: a sweep when `config.sweep` is set,
/// otherwise one point at `config.n`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let (param, grid, trials) = match &config.sweep {
        Some(s) => (s.param, s.values.clone(), s.trials_per_value(config.trials)),
        None => (SweepParam::N, vec![config.n as f64], config.trials),
    };
    let point_configs: Vec<ExperimentConfig> = grid.iter().map(|&v| config.at_sweep_value(param, v)).collect();
    let root = RngSeed(config.seed);

    let problems = point_configs
        .iter()
        .map(|c| SyntheticProblem::new(&c.env, root.derive(ENV_STREAM)))
        .collect::<cael_core::Result<Vec<_>>>()?;
    let truths = problems
        .par_iter()
        .zip(&point_configs)
        .map(|(p, c)| p.env.true_value(&p.target, c.ground_truth_mc, root.derive(TRUTH_STREAM)))
        .collect::<cael_core::Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|p| (0..trials).map(move |t| (p, t))).collect();
    info!("running {} trials over {} grid value(s)", jobs.len(), grid.len());
    let settings: Vec<_> = point_configs.iter().map(|c| c.estimation()).collect();
    let results: Vec<(usize, std::result::Result<TrialOutcome, TrialFailure>)> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let seed = trial_seed(root, t);
            let r = run_trial(&problems[p], point_configs[p].n, &settings[p], seed)
                .map_err(|e| TrialFailure { trial_seed: seed, reason: e.to_string() });
            (p, r)
        })
        .collect();

    let mut points: Vec<PointResult> = grid
        .iter()
        .zip(truths)
        .map(|(&v, truth)| PointResult { sweep_value: v, truth, outcomes: Vec::new(), failures: Vec::new() })
        .collect();
    for (p, r) in results {
        match r {
            Ok(o) => points[p].outcomes.push(o),
            Err(f) => {
                warn!(
                    "{}={}: trial {} failed and is excluded: {}",
                    param.name(),
                    grid[p],
                    f.trial_seed.0,
                    f.reason
                );
                points[p].failures.push(f);
            }
        }
    }

    let rows = metrics_rows(&points, param.name(), &config.estimators, root, config.bootstrap_resamples)?;
    let cdf = if points.len() == 1 && config.estimators.contains(&EstimatorKind::Ips) {
        Some(cdf_against_ips(&points[0])?)
    } else {
        None
    };
    Ok(ExperimentResult { sweep_param: param.name().to_string(), points, rows, cdf })
}

pub(crate) fn metrics_rows(
    points: &[PointResult],
    sweep_param: &str,
    estimators: &[EstimatorKind],
    root: RngSeed,
    resamples: usize,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (pi, point) in points.iter().enumerate() {
        for (ei, &kind) in estimators.iter().enumerate() {
            let values = point.values(kind);
            if values.len() < 2 {
                return Err(HarnessError::Data(format!(
                    "{sweep_param}={}: only {} successful trial(s) for {kind}",
                    point.sweep_value,
                    values.len()
                )));
            }
            let seed = root.derive(BOOTSTRAP_STREAM).derive(pi as u64).derive(ei as u64);
            let summary = aggregate_with(&values, point.truth.value, seed, resamples)?;
            rows.push(MetricsRow {
                estimator: kind.name().to_string(),
                sweep_param: sweep_param.to_string(),
                sweep_value: point.sweep_value,
                summary,
            });
        }
    }
    Ok(rows)
}

pub(crate) fn cdf_against_ips(point: &PointResult) -> Result<RelativeErrorCdf> {
    let cdf = relative_error_cdf(&point.squared_errors(), EstimatorKind::Ips.name())?;
    if !cdf.excluded.is_empty() {
        warn!("{} run(s) with zero IPS error excluded from the CDF", cdf.excluded.len());
    }
    Ok(cdf)
}
