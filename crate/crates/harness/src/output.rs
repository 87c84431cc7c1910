//! CSV and SVG outputs, and reading them back for `report`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cael_core::metrics::{CdfTable, ErrorSummary, MetricsRow};
use serde::Serialize;

use crate::error::{io_error, HarnessError, Result};
use crate::experiment::ExperimentResult;

pub const METRICS_HEADER: &str = "estimator,sweep_param,sweep_value,mse,bias_sq,variance,ci_low,ci_high,trials";
pub const CDF_HEADER: &str = "estimator,ratio,cdf";
pub const TRIALS_HEADER: &str = "sweep_param,sweep_value,trial_seed,estimator,value";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.estimator, r.sweep_param, r.sweep_value, m.mse, m.bias_sq, m.variance, m.ci_low, m.ci_high, m.trials
        );
    }
    s
}

pub fn cdf_csv(tables: &[CdfTable]) -> String {
    let mut s = String::from(CDF_HEADER);
    s.push('\n');
    for t in tables {
        for (r, c) in &t.points {
            let _ = writeln!(s, "{},{r},{c}", t.estimator);
        }
    }
    s
}

pub fn trials_csv(result: &ExperimentResult) -> String {
    let mut s = String::from(TRIALS_HEADER);
    s.push('\n');
    for p in &result.points {
        for o in &p.outcomes {
            for (k, v) in &o.values {
                let _ = writeln!(s, "{},{},{},{k},{v}", result.sweep_param, p.sweep_value, o.trial_seed.0);
            }
        }
    }
    s
}

#[derive(Serialize)]
struct RunSummary<'a, C: Serialize> {
    config: &'a C,
    points: Vec<PointSummary<'a>>,
}

#[derive(Serialize)]
struct PointSummary<'a> {
    sweep_value: f64,
    ground_truth: f64,
    ground_truth_std_error: f64,
    successful_trials: usize,
    failures: Vec<(u64, &'a str)>,
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, Default)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

/// Writes `metrics.csv`, `trials.csv`, `run.json`, `cdf.csv` when a CDF was
/// computed, and the SVG charts.
pub fn write_outputs<C: Serialize>(dir: &Path, result: &ExperimentResult, config: &C) -> Result<Written> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut written = Written::default();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io_error(&p, e))?;
        written.files.push(p);
        Ok(())
    };
    put("metrics.csv", metrics_csv(&result.rows))?;
    put("trials.csv", trials_csv(result))?;
    let summary = RunSummary {
        config,
        points: result
            .points
            .iter()
            .map(|p| PointSummary {
                sweep_value: p.sweep_value,
                ground_truth: p.truth.value,
                ground_truth_std_error: p.truth.std_error,
                successful_trials: p.outcomes.len(),
                failures: p.failures.iter().map(|f| (f.trial_seed.0, f.reason.as_str())).collect(),
            })
            .collect(),
    };
    put("run.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    if let Some(cdf) = &result.cdf {
        put("cdf.csv", cdf_csv(&cdf.tables))?;
    }
    for (name, svg) in charts(&result.rows, result.cdf.as_ref().map(|c| c.tables.as_slice())) {
        put(&name, svg)?;
    }
    Ok(written)
}

/// SVG charts for the given rows: a bar chart for a single grid value,
/// a line chart for sweeps, and the CDF chart when tables are given.
pub fn charts(rows: &[MetricsRow], cdf: Option<&[CdfTable]>) -> Vec<(String, String)> {
    let mut out = Vec::new();
    if !rows.is_empty() {
        let values: Vec<f64> = distinct(rows.iter().map(|r| r.sweep_value));
        if values.len() == 1 {
            out.push(("mse.svg".to_string(), bar_chart(rows)));
        } else {
            out.push((format!("mse_{}.svg", rows[0].sweep_param), line_chart(rows, &values)));
        }
    }
    if let Some(tables) = cdf {
        if tables.iter().any(|t| !t.points.is_empty()) {
            out.push(("cdf.svg".to_string(), cdf_chart(tables)));
        }
    }
    out
}

fn distinct(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for x in it {
        if !v.contains(&x) {
            v.push(x);
        }
    }
    v
}

/// Reads a `metrics.csv` written by [`metrics_csv`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(HarnessError::Data(format!("{}: unexpected header", path.display())));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || HarnessError::Data(format!("{} line {}: malformed row", path.display(), i + 2));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 9 {
                return Err(bad());
            }
            let f = |j: usize| c[j].parse::<f64>().map_err(|_| bad());
            Ok(MetricsRow {
                estimator: c[0].to_string(),
                sweep_param: c[1].to_string(),
                sweep_value: f(2)?,
                summary: ErrorSummary {
                    mse: f(3)?,
                    bias_sq: f(4)?,
                    variance: f(5)?,
                    ci_low: f(6)?,
                    ci_high: f(7)?,
                    trials: c[8].parse().map_err(|_| bad())?,
                },
            })
        })
        .collect()
}

/// Reads a `cdf.csv` written by [`cdf_csv`].
pub fn read_cdf(path: &Path) -> Result<Vec<CdfTable>> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CDF_HEADER) {
        return Err(HarnessError::Data(format!("{}: unexpected header", path.display())));
    }
    let mut tables: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = || HarnessError::Data(format!("{} line {}: malformed row", path.display(), i + 2));
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 3 {
            return Err(bad());
        }
        let point = (c[1].parse().map_err(|_| bad())?, c[2].parse().map_err(|_| bad())?);
        if !tables.contains_key(c[0]) {
            order.push(c[0].to_string());
        }
        tables.entry(c[0].to_string()).or_default().push(point);
    }
    Ok(order
        .into_iter()
        .map(|e| CdfTable { points: tables.remove(&e).unwrap_or_default(), estimator: e })
        .collect())
}

/// Plain-text table of the rows, for the terminal.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut s = format!(
        "{:<10} {:>12} {:>12} {:>12} {:>12} {:>25} {:>6}\n",
        "estimator", "value", "mse", "bias^2", "variance", "95% ci (mse)", "trials"
    );
    for r in rows {
        let m = &r.summary;
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>12.5e} {:>12.5e} {:>12.5e} {:>25} {:>6}",
            r.estimator,
            format!("{}={}", r.sweep_param, r.sweep_value),
            m.mse,
            m.bias_sq,
            m.variance,
            format!("[{:.4e}, {:.4e}]", m.ci_low, m.ci_high),
            m.trials
        );
    }
    s
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Log-scale axis spanning whole decades around `[lo, hi]`.
struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| *v > 0.0 && v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return LogAxis { lo: 0.0, hi: 1.0 };
        }
        let (lo, mut hi) = (lo.log10().floor(), hi.log10().ceil());
        if hi <= lo {
            hi = lo + 1.0;
        }
        LogAxis { lo, hi }
    }

    /// Fraction along the axis; non-positive values clamp to the bottom.
    fn frac(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        ((v.log10() - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn decades(&self) -> impl Iterator<Item = i32> {
        (self.lo as i32)..=(self.hi as i32)
    }
}

fn plot_w() -> f64 {
    WIDTH - LEFT - RIGHT
}

fn plot_h() -> f64 {
    HEIGHT - TOP - BOTTOM
}

fn y_of(frac: f64) -> f64 {
    TOP + plot_h() * (1.0 - frac)
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        LEFT + plot_w() / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(s: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        s,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        plot_w(),
        plot_h()
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        LEFT + plot_w() / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        TOP + plot_h() / 2.0,
        TOP + plot_h() / 2.0,
        escape(y_label)
    );
}

fn log_y_ticks(s: &mut String, axis: &LogAxis) {
    for d in axis.decades() {
        let y = y_of(axis.frac(10f64.powi(d)));
        let _ = writeln!(
            s,
            "<line x1=\"{LEFT}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">1e{d}</text>",
            LEFT + plot_w(),
            LEFT - 6.0,
            y + 4.0
        );
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{}\">{}</text>",
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(n)
        );
    }
}

fn estimators(rows: &[MetricsRow]) -> Vec<&str> {
    let mut v: Vec<&str> = Vec::new();
    for r in rows {
        if !v.contains(&r.estimator.as_str()) {
            v.push(&r.estimator);
        }
    }
    v
}

fn bar_chart(rows: &[MetricsRow]) -> String {
    let axis = LogAxis::new(rows.iter().flat_map(|r| [r.summary.mse, r.summary.ci_low, r.summary.ci_high]));
    let mut s = svg_open(&format!("MSE at {}={}", rows[0].sweep_param, rows[0].sweep_value));
    log_y_ticks(&mut s, &axis);
    let slot = plot_w() / rows.len() as f64;
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + slot * (i as f64 + 0.2);
        let y = y_of(axis.frac(r.summary.mse));
        let _ = writeln!(
            s,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
            slot * 0.6,
            TOP + plot_h() - y,
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + slot * 0.3;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            y_of(axis.frac(r.summary.ci_low)),
            y_of(axis.frac(r.summary.ci_high))
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            TOP + plot_h() + 16.0,
            escape(&r.estimator)
        );
    }
    frame(&mut s, "estimator", "MSE (log scale)");
    legend(&mut s, &estimators(rows));
    s.push_str("</svg>\n");
    s
}

fn line_chart(rows: &[MetricsRow], values: &[f64]) -> String {
    let param = &rows[0].sweep_param;
    let axis = LogAxis::new(rows.iter().map(|r| r.summary.mse));
    let mut s = svg_open(&format!("MSE as a function of {param}"));
    log_y_ticks(&mut s, &axis);
    let step = plot_w() / values.len() as f64;
    let x_of = |v: f64| LEFT + step * (values.iter().position(|u| *u == v).unwrap_or(0) as f64 + 0.5);
    for v in values {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{v}</text>",
            x_of(*v),
            TOP + plot_h() + 16.0
        );
    }
    let names = estimators(rows);
    for (i, name) in names.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.estimator == *name)
            .map(|r| format!("{:.2},{:.2}", x_of(r.sweep_value), y_of(axis.frac(r.summary.mse))))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
        for p in &pts {
            let (x, y) = p.split_once(',').expect("formatted above");
            let _ = writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"3\" fill=\"{color}\"/>");
        }
    }
    frame(&mut s, param, "MSE (log scale)");
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}

fn cdf_chart(tables: &[CdfTable]) -> String {
    let axis = LogAxis::new(tables.iter().flat_map(|t| t.points.iter().map(|p| p.0)));
    let mut s = svg_open("CDF of squared error relative to IPS");
    for d in axis.decades() {
        let x = LEFT + plot_w() * axis.frac(10f64.powi(d));
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" y1=\"{TOP}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#ddd\"/>\n\
             <text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>",
            TOP + plot_h(),
            TOP + plot_h() + 16.0
        );
    }
    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{q}</text>",
            LEFT - 6.0,
            y_of(q) + 4.0
        );
    }
    let names: Vec<&str> = tables.iter().map(|t| t.estimator.as_str()).collect();
    for (i, t) in tables.iter().enumerate() {
        let mut pts = vec![format!("{LEFT:.2},{:.2}", y_of(0.0))];
        let mut prev = 0.0;
        for &(r, c) in &t.points {
            let x = LEFT + plot_w() * axis.frac(r);
            pts.push(format!("{x:.2},{:.2}", y_of(prev)));
            pts.push(format!("{x:.2},{:.2}", y_of(c)));
            prev = c;
        }
        pts.push(format!("{:.2},{:.2}", LEFT + plot_w(), y_of(prev)));
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>",
            pts.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    frame(&mut s, "squared error / IPS squared error (log scale)", "CDF");
    legend(&mut s, &names);
    s.push_str("</svg>\n");
    s
}
