//! MSE aggregation over trials and relative-error CDFs.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngSeed;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

/// Squared bias, variance and MSE of one estimator over a trial set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mse: f64,
    pub bias_sq: f64,
    /// Population variance (divides by the number of trials).
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub estimator: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    #[serde(flatten)]
    pub summary: ErrorSummary,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bias², variance and MSE of `values` against `truth`, with a 95%
/// percentile bootstrap interval on the MSE.
pub fn aggregate(values: &[f64], truth: f64, seed: RngSeed) -> Result<ErrorSummary> {
    aggregate_with(values, truth, seed, BOOTSTRAP_RESAMPLES)
}

pub fn aggregate_with(values: &[f64], truth: f64, seed: RngSeed, resamples: usize) -> Result<ErrorSummary> {
    if values.len() < 2 {
        return Err(Error::invalid("aggregation needs at least two trials"));
    }
    if values.iter().any(|v| !v.is_finite()) || !truth.is_finite() {
        return Err(Error::NonFinite("trial values and ground truth must be finite".into()));
    }
    let m = mean(values);
    let bias = m - truth;
    let variance = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - truth) * (v - truth)).collect();
    let mse = mean(&sq);
    let (ci_low, ci_high) = bootstrap_mean_ci(&sq, seed, resamples);
    Ok(ErrorSummary { mse, bias_sq: bias * bias, variance, ci_low, ci_high, trials: values.len() })
}

fn bootstrap_mean_ci(sq: &[f64], seed: RngSeed, resamples: usize) -> (f64, f64) {
    if resamples == 0 {
        let m = mean(sq);
        return (m, m);
    }
    let mut rng = seed.rng();
    let n = sq.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| sq[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (quantile(&means, 0.025), quantile(&means, 0.975))
}

/// Empirical CDF of one estimator's squared error divided by the
/// baseline's, paired by trial seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    pub estimator: String,
    /// `(ratio, cdf)` with distinct ratios in increasing order; the last
    /// cdf value is 1.
    pub points: Vec<(f64, f64)>,
}

impl CdfTable {
    /// Fraction of runs with ratio `≤ r`.
    pub fn cdf_at(&self, r: f64) -> f64 {
        self.points.iter().take_while(|(x, _)| *x <= r).last().map_or(0.0, |p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeErrorCdf {
    pub tables: Vec<CdfTable>,
    /// Trial seeds dropped because the baseline's error was zero.
    pub excluded: Vec<u64>,
}

/// Relative squared-error CDFs of every estimator against `baseline`.
/// `errors` maps estimator name to squared error per trial seed; every
/// estimator must cover the same trial seeds.
pub fn relative_error_cdf(errors: &BTreeMap<String, BTreeMap<u64, f64>>, baseline: &str) -> Result<RelativeErrorCdf> {
    let base = errors
        .get(baseline)
        .ok_or_else(|| Error::invalid(alloc::format!("baseline estimator {baseline} has no errors")))?;
    for (name, runs) in errors {
        if runs.len() != base.len() || runs.keys().zip(base.keys()).any(|(a, b)| a != b) {
            return Err(Error::invalid(alloc::format!("estimator {name} is not paired with the baseline by trial seed")));
        }
        if runs.values().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::invalid(alloc::format!("estimator {name} has an invalid squared error")));
        }
    }
    let excluded: Vec<u64> = base.iter().filter(|(_, e)| **e == 0.0).map(|(s, _)| *s).collect();
    let kept = base.len() - excluded.len();
    if kept == 0 {
        return Err(Error::invalid("baseline error is zero in every run"));
    }
    let mut tables = Vec::with_capacity(errors.len());
    for (name, runs) in errors {
        let mut ratios: Vec<f64> = runs
            .iter()
            .filter(|(seed, _)| base[seed] != 0.0)
            .map(|(seed, e)| e / base[seed])
            .collect();
        ratios.sort_by(f64::total_cmp);
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, r) in ratios.iter().enumerate() {
            let c = (i + 1) as f64 / kept as f64;
            match points.last_mut() {
                Some(last) if last.0 == *r => last.1 = c,
                _ => points.push((*r, c)),
            }
        }
        tables.push(CdfTable { estimator: name.clone(), points });
    }
    Ok(RelativeErrorCdf { tables, excluded })
}
