//! Loading logged bandit data in the Open Bandit Dataset CSV layout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use cael_core::metrics::MetricsRow;
use cael_core::policy::{uniform_policy, LookupPolicy};
use cael_core::synthetic::GroundTruth;
use cael_core::trial::{estimate_all, trial_seed, TrialFailure, TrialOutcome};
use cael_core::{ActionId, ContextVector, Dataset, LoggedSample, RngSeed};
use log::{info, warn};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ObdConfig};
use crate::error::{io_error, HarnessError, Result};
use crate::experiment::{cdf_against_ips, metrics_rows, ExperimentResult, PointResult};

/// Mapping for the "random" campaign: item and position form 240 actions,
/// the first 20 user-item affinity columns form the context.
pub const DEFAULT_MAPPING: &str = include_str!("../mappings/obd_random.json");

/// How one context column is encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextColumn {
    /// Bare name: numeric passthrough.
    Numeric(String),
    Typed(TypedColumn),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypedColumn {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ColumnKind,
    /// Inline vocabulary for categorical columns.
    #[serde(default)]
    pub levels: Option<Vec<String>>,
    /// Vocabulary file, one level per line; relative paths are resolved
    /// against the mapping file.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub action_column: String,
    /// When set, the action is `action * positions + (position - 1)`.
    #[serde(default)]
    pub position_column: Option<String>,
    #[serde(default)]
    pub positions: Option<usize>,
    pub reward_column: String,
    pub propensity_column: String,
    pub context_columns: Vec<ContextColumn>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    #[serde(default = "default_true")]
    pub has_header: bool,
    /// Overrides the action count inferred from the largest action id.
    #[serde(default)]
    pub num_actions: Option<usize>,
    /// Declared context dimension; the encoded length must match it.
    #[serde(default)]
    pub context_dim: Option<usize>,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl ColumnMapping {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ColumnMapping =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("column mapping: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut m = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for c in &mut m.context_columns {
            if let ContextColumn::Typed(TypedColumn { vocabulary: Some(v), .. }) = c {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(m)
    }

    pub fn bundled() -> Self {
        Self::from_json(DEFAULT_MAPPING).expect("bundled mapping is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(format!("column mapping: {m}")));
        if self.context_columns.is_empty() {
            return bad("context_columns must be non-empty".into());
        }
        if !self.delimiter.is_ascii() {
            return bad("delimiter must be a single ASCII character".into());
        }
        if self.position_column.is_some() != self.positions.is_some() {
            return bad("position_column and positions go together".into());
        }
        let mut names: Vec<&str> = vec![&self.action_column, &self.reward_column, &self.propensity_column];
        names.extend(self.position_column.as_deref());
        names.extend(self.context_columns.iter().map(ContextColumn::name));
        let mut seen = std::collections::BTreeSet::new();
        for n in names {
            if !seen.insert(n) {
                return bad(format!("column {n} is used twice"));
            }
        }
        for c in &self.context_columns {
            if let ContextColumn::Typed(t) = c {
                match t.kind {
                    ColumnKind::Categorical if t.levels.is_none() && t.vocabulary.is_none() => {
                        return bad(format!("categorical column {} needs levels or a vocabulary file", t.name))
                    }
                    ColumnKind::Numeric if t.levels.is_some() || t.vocabulary.is_some() => {
                        return bad(format!("numeric column {} cannot have a vocabulary", t.name))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

impl ContextColumn {
    pub fn name(&self) -> &str {
        match self {
            ContextColumn::Numeric(n) => n,
            ContextColumn::Typed(t) => &t.name,
        }
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Numeric,
    /// Level to slot; unknown levels encode as all zeros.
    Categorical(BTreeMap<String, usize>),
}

impl Encoder {
    fn width(&self) -> usize {
        match self {
            Encoder::Numeric => 1,
            Encoder::Categorical(levels) => levels.len(),
        }
    }
}

/// A mapping with its vocabularies loaded, ready to encode rows.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    names: Vec<String>,
    encoders: Vec<Encoder>,
    dim: usize,
}

impl ContextEncoder {
    pub fn new(mapping: &ColumnMapping) -> Result<Self> {
        let mut names = Vec::new();
        let mut encoders = Vec::new();
        for c in &mapping.context_columns {
            names.push(c.name().to_string());
            let enc = match c {
                ContextColumn::Numeric(_) => Encoder::Numeric,
                ContextColumn::Typed(t) => match t.kind {
                    ColumnKind::Numeric => Encoder::Numeric,
                    ColumnKind::Categorical => {
                        let levels = match (&t.levels, &t.vocabulary) {
                            (Some(l), _) => l.clone(),
                            (None, Some(path)) => fs::read_to_string(path)
                                .map_err(|e| io_error(path, e))?
                                .lines()
                                .map(str::trim)
                                .filter(|l| !l.is_empty())
                                .map(String::from)
                                .collect(),
                            (None, None) => unreachable!("rejected by validate"),
                        };
                        let mut map = BTreeMap::new();
                        for (i, l) in levels.into_iter().enumerate() {
                            if map.insert(l.clone(), i).is_some() {
                                return Err(HarnessError::Config(format!(
                                    "column {}: level {l} listed twice",
                                    t.name
                                )));
                            }
                        }
                        Encoder::Categorical(map)
                    }
                },
            };
            encoders.push(enc);
        }
        let dim = encoders.iter().map(Encoder::width).sum();
        if let Some(d) = mapping.context_dim {
            if d != dim {
                return Err(HarnessError::Config(format!(
                    "column mapping encodes {dim} context features but declares context_dim {d}"
                )));
            }
        }
        Ok(ContextEncoder { names, encoders, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Encodes the raw cells of the context columns, in mapping order.
    /// `row` is only used in error messages.
    pub fn encode(&self, cells: &[&str], row: usize) -> Result<ContextVector> {
        if cells.len() != self.encoders.len() {
            return Err(HarnessError::Data(format!(
                "row {row}: expected {} context cells, got {}",
                self.encoders.len(),
                cells.len()
            )));
        }
        let mut out = Vec::with_capacity(self.dim);
        for ((enc, cell), name) in self.encoders.iter().zip(cells).zip(&self.names) {
            match enc {
                Encoder::Numeric => out.push(parse_f64(cell, name, row)?),
                Encoder::Categorical(levels) => {
                    let start = out.len();
                    out.resize(start + levels.len(), 0.0);
                    if let Some(&slot) = levels.get(cell.trim()) {
                        out[start + slot] = 1.0;
                    }
                }
            }
        }
        ContextVector::new(out).map_err(|e| HarnessError::Data(format!("row {row}: {e}")))
    }
}

/// Encodes one row given as column name to raw cell.
pub fn encode_context(fields: &BTreeMap<String, String>, mapping: &ColumnMapping) -> Result<ContextVector> {
    let encoder = ContextEncoder::new(mapping)?;
    let cells = mapping
        .context_columns
        .iter()
        .map(|c| {
            fields
                .get(c.name())
                .map(String::as_str)
                .ok_or_else(|| HarnessError::Data(format!("missing column {}", c.name())))
        })
        .collect::<Result<Vec<_>>>()?;
    encoder.encode(&cells, 1)
}

fn parse_f64(cell: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| HarnessError::Data(format!("row {row}, column {column}: cannot parse {cell:?} as a number")))?;
    if !v.is_finite() {
        return Err(HarnessError::Data(format!("row {row}, column {column}: non-finite value")));
    }
    Ok(v)
}

fn parse_index(cell: &str, column: &str, row: usize) -> Result<usize> {
    cell.trim().parse().map_err(|_| {
        HarnessError::Data(format!("row {row}, column {column}: cannot parse {cell:?} as a non-negative integer"))
    })
}

fn column_index(headers: Option<&csv::StringRecord>, name: &str, path: &Path) -> Result<usize> {
    match headers {
        Some(h) => h
            .iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| HarnessError::Data(format!("{}: missing column {name}", path.display()))),
        None => name.parse().map_err(|_| {
            HarnessError::Config(format!("column {name}: files without a header are addressed by 0-based index"))
        }),
    }
}

/// Reads a logged dataset. Rows are numbered from 1, counting data rows
/// only.
pub fn load_csv(path: &Path, mapping: &ColumnMapping, max_rows: Option<usize>) -> Result<Dataset> {
    mapping.validate()?;
    let encoder = ContextEncoder::new(mapping)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter as u8)
        .has_headers(mapping.has_header)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = if mapping.has_header { Some(reader.headers().map_err(|e| csv_error(path, e))?.clone()) } else { None };
    let col = |n: &str| column_index(headers.as_ref(), n, path);
    let action_col = col(&mapping.action_column)?;
    let position_col = mapping.position_column.as_deref().map(col).transpose()?;
    let reward_col = col(&mapping.reward_column)?;
    let prop_col = col(&mapping.propensity_column)?;
    let ctx_cols = mapping.context_columns.iter().map(|c| col(c.name())).collect::<Result<Vec<_>>>()?;

    let mut raw = Vec::new();
    let mut max_action = 0;
    for (i, record) in reader.records().enumerate() {
        if max_rows.is_some_and(|m| raw.len() >= m) {
            break;
        }
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let cell = |c: usize, name: &str| {
            record
                .get(c)
                .ok_or_else(|| HarnessError::Data(format!("row {row}: missing cell for column {name}")))
        };
        let mut action = parse_index(cell(action_col, &mapping.action_column)?, &mapping.action_column, row)?;
        if let (Some(pc), Some(positions)) = (position_col, mapping.positions) {
            let name = mapping.position_column.as_deref().unwrap_or_default();
            let p = parse_index(cell(pc, name)?, name, row)?;
            if p == 0 || p > positions {
                return Err(HarnessError::Data(format!("row {row}: position {p} outside 1..={positions}")));
            }
            action = action * positions + p - 1;
        }
        let reward = parse_f64(cell(reward_col, &mapping.reward_column)?, &mapping.reward_column, row)?;
        let propensity = parse_f64(cell(prop_col, &mapping.propensity_column)?, &mapping.propensity_column, row)?;
        if propensity <= 0.0 || propensity > 1.0 {
            return Err(HarnessError::Data(format!("row {row}: propensity {propensity} outside (0, 1]")));
        }
        let cells = ctx_cols
            .iter()
            .zip(&mapping.context_columns)
            .map(|(&c, m)| cell(c, m.name()))
            .collect::<Result<Vec<_>>>()?;
        let context = encoder.encode(&cells, row)?;
        max_action = max_action.max(action);
        raw.push(LoggedSample::new(context, ActionId(action), reward, propensity));
    }
    if raw.is_empty() {
        return Err(HarnessError::Data(format!("{}: no data rows", path.display())));
    }
    let num_actions = match mapping.num_actions {
        Some(k) if k <= max_action => {
            return Err(HarnessError::Data(format!(
                "{}: action id {max_action} is out of range for {k} actions",
                path.display()
            )))
        }
        Some(k) => k,
        None => max_action + 1,
    };
    Ok(Dataset::new(raw, encoder.dim(), num_actions)?)
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.kind() {
        csv::ErrorKind::Io(_) => HarnessError::Data(format!("{}: {e}", path.display())),
        _ => HarnessError::Data(format!("{}: malformed CSV: {e}", path.display())),
    }
}

/// Number of samples whose logged propensity differs from `1/K` by more
/// than `rel_tol` relative.
pub fn non_uniform_propensities(data: &Dataset, rel_tol: f64) -> usize {
    let u = 1.0 / data.num_actions() as f64;
    data.samples().iter().filter(|s| (s.behavior_propensity - u).abs() > rel_tol * u).count()
}

/// Reads target-policy probabilities. Each row is a key followed by `K`
/// probabilities; the key is a 0-based data row index or `*` for every
/// context without its own row. A first line whose key is neither is a
/// header.
pub fn load_target_policy(path: &Path, data: &Dataset) -> Result<LookupPolicy> {
    let k = data.num_actions();
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut policy = LookupPolicy::new(k);
    let mut has_fallback = false;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let key = cells.next().unwrap_or_default();
        let is_key = key == "*" || key.parse::<usize>().is_ok();
        if !is_key {
            if line_no == 0 {
                continue;
            }
            return Err(HarnessError::Data(format!("{} line {}: bad key {key:?}", path.display(), line_no + 1)));
        }
        let probs = cells
            .map(|c| parse_f64(c, "probability", line_no + 1))
            .collect::<Result<Vec<_>>>()?;
        if probs.len() != k {
            return Err(HarnessError::Data(format!(
                "{} line {}: expected {k} probabilities, got {}",
                path.display(),
                line_no + 1,
                probs.len()
            )));
        }
        let err = |e: cael_core::Error| HarnessError::Data(format!("{} line {}: {e}", path.display(), line_no + 1));
        if key == "*" {
            policy.set_fallback(probs).map_err(err)?;
            has_fallback = true;
        } else {
            let row: usize = key.parse().expect("checked above");
            // Rows past a max_rows cut are not loaded and have no context.
            if let Some(s) = data.samples().get(row) {
                policy.insert(&s.context, probs).map_err(err)?;
            }
        }
    }
    if !has_fallback {
        if let Some(i) = data.samples().iter().position(|s| !policy.contains(&s.context)) {
            return Err(HarnessError::Data(format!(
                "{}: no target probabilities for data row {i} and no * row",
                path.display()
            )));
        }
    }
    Ok(policy)
}

/// Loads everything an `obd` run needs.
pub struct ObdInputs {
    pub data: Dataset,
    pub target: LookupPolicy,
    pub truth: GroundTruth,
}

pub fn load_inputs(cfg: &ObdConfig) -> Result<ObdInputs> {
    let mapping = match &cfg.mapping {
        Some(p) => ColumnMapping::from_file(p)?,
        None => ColumnMapping::bundled(),
    };
    let data = load_csv(&cfg.data, &mapping, cfg.max_rows)?;
    info!("loaded {} samples, d={}, K={}", data.len(), data.context_dim(), data.num_actions());
    let off = non_uniform_propensities(&data, 1e-6);
    if off > 0 {
        warn!(
            "{off} of {} logged propensities differ from 1/K = {}; the behavior policy is still taken as uniform",
            data.len(),
            1.0 / data.num_actions() as f64
        );
    }
    let target = load_target_policy(&cfg.target_probs, &data)?;
    let truth = match (&cfg.on_policy, cfg.ground_truth) {
        (Some(path), _) => {
            let on = load_csv(path, &mapping, None)?;
            let n = on.len();
            let mean = on.mean_reward();
            let var = on.samples().iter().map(|s| (s.reward - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            GroundTruth { value: mean, mc_samples: n, std_error: (var / n as f64).sqrt() }
        }
        (None, Some(v)) => GroundTruth { value: v, mc_samples: 0, std_error: 0.0 },
        (None, None) => {
            return Err(HarnessError::Config("obd needs an on-policy log or an explicit ground_truth".into()))
        }
    };
    if cfg.sample_size > data.len() {
        return Err(HarnessError::Config(format!(
            "sample_size {} exceeds the {} loaded rows",
            cfg.sample_size,
            data.len()
        )));
    }
    Ok(ObdInputs { data, target, truth })
}

/// Repeated subsampled runs on logged data, errors relative to IPS.
pub fn run_obd(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let cfg = config.obd.as_ref().ok_or_else(|| HarnessError::Config("missing obd section".into()))?;
    let inputs = load_inputs(cfg)?;
    let behavior = uniform_policy(inputs.data.num_actions())?;
    let settings = config.estimation();
    let root = RngSeed(config.seed);
    let results: Vec<std::result::Result<TrialOutcome, TrialFailure>> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let seed = trial_seed(root, r);
            let mut rng = seed.derive(0).rng();
            let mut idx = sample(&mut rng, inputs.data.len(), cfg.sample_size).into_vec();
            idx.sort_unstable();
            let sub = inputs.data.select(&idx);
            estimate_all(&sub, &inputs.target, &behavior, &settings, seed.derive(1))
                .map(|values| TrialOutcome { trial_seed: seed, values })
                .map_err(|e| TrialFailure { trial_seed: seed, reason: e.to_string() })
        })
        .collect();
    let mut point = PointResult {
        sweep_value: cfg.sample_size as f64,
        truth: inputs.truth,
        outcomes: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(o) => point.outcomes.push(o),
            Err(f) => {
                warn!("run {} failed and is excluded: {}", f.trial_seed.0, f.reason);
                point.failures.push(f);
            }
        }
    }
    let points = vec![point];
    let rows: Vec<MetricsRow> = metrics_rows(&points, "n", &config.estimators, root, config.bootstrap_resamples)?;
    let cdf = if config.estimators.contains(&cael_core::trial::EstimatorKind::Ips) {
        Some(cdf_against_ips(&points[0])?)
    } else {
        None
    };
    Ok(ExperimentResult { sweep_param: "n".into(), points, rows, cdf })
}
