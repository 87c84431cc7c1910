//! The `cael-mips` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use cael_core::models::train_embeddings;
use cael_core::oracle::identity_suite;
use cael_core::trial::{trial_seed, EstimatorKind, SyntheticProblem};
use cael_core::RngSeed;
use clap::{Args, Parser, Subcommand};
use log::{error, info};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, ObdConfig, Preset, SweepParam, SweepSpec};
use crate::error::{io_error, HarnessError, Result};
use crate::experiment::run_experiment;
use crate::obd::run_obd;
use crate::output::{charts, format_table, read_cdf, read_metrics, write_outputs};
use crate::surrogate::{write_surrogate, SurrogateSpec};

#[derive(Debug, Parser)]
#[command(name = "cael-mips", version, about = "Off-policy evaluation experiments with learned action embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand. Flags override the config file,
/// which overrides the preset.
#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; missing fields come from the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base configuration: desk or full.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Logged samples per trial.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub num_actions: Option<usize>,
    #[arg(long, global = true)]
    pub context_dim: Option<usize>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub reward_std: Option<f64>,
    /// Comma-separated subset of IPS, DM, AEL-MIPS, CAEL-MIPS.
    #[arg(long, global = true, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true)]
    pub hidden: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub ground_truth_mc: Option<usize>,
    #[arg(long, global = true)]
    pub bootstrap_resamples: Option<usize>,
    /// Train a separate reward-only network for DM.
    #[arg(long, global = true)]
    pub independent_dm: bool,
    /// Output directory (default: results).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the exact bias and variance identities on random instances.
    Verify {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Sample size used in the variance identities.
        #[arg(long = "samples", default_value_t = 1000)]
        samples: usize,
    },
    /// One synthetic experiment.
    Synth {
        /// Also save the CAEL-MIPS models of the first trial.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthetic experiments over a parameter grid.
    Sweep {
        /// n, num_actions, epsilon or reward_std.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Trials per value (default: 100 for n, the experiment trials otherwise).
        #[arg(long)]
        sweep_trials: Option<usize>,
    },
    /// Repeated subsampled runs on a logged dataset.
    Obd {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Column mapping JSON; the bundled random-campaign mapping if omitted.
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long)]
        target_probs: Option<PathBuf>,
        /// Log collected under the target policy, for the ground truth.
        #[arg(long)]
        on_policy: Option<PathBuf>,
        #[arg(long)]
        ground_truth: Option<f64>,
        #[arg(long)]
        max_rows: Option<usize>,
        #[arg(long)]
        sample_size: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Write a synthetic dataset in the Open Bandit Dataset layout.
    Surrogate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = SurrogateSpec::default().rows)]
        rows: usize,
        #[arg(long, default_value_t = SurrogateSpec::default().on_policy_rows)]
        on_policy_rows: usize,
    },
    /// Print a results directory and redraw its charts.
    Report { dir: PathBuf },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    }
    let mut config = resolve_config(&cli.common)?;
    let out_dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    match cli.command {
        Command::Verify { instances, samples } => verify(&config, instances, samples, &out_dir),
        Command::Synth { checkpoint } => {
            config.sweep = None;
            let result = run_experiment(&config)?;
            finish(&out_dir, &result, &config)?;
            if let Some(path) = checkpoint {
                save_checkpoint(&config, &path)?;
            }
            Ok(())
        }
        Command::Sweep { param, values, sweep_trials } => {
            let spec = SweepSpec { param: SweepParam::parse(&param)?, values, trials: sweep_trials };
            config.sweep = Some(spec);
            let result = run_experiment(&config)?;
            finish(&out_dir, &result, &config)
        }
        Command::Obd { data, mapping, target_probs, on_policy, ground_truth, max_rows, sample_size, runs } => {
            let mut obd = config.obd.take().unwrap_or(ObdConfig {
                data: PathBuf::new(),
                mapping: None,
                target_probs: PathBuf::new(),
                on_policy: None,
                ground_truth: None,
                max_rows: None,
                sample_size: 10_000,
                runs: config.trials,
            });
            if let Some(d) = data {
                obd.data = d;
            }
            if let Some(m) = mapping {
                obd.mapping = Some(m);
            }
            if let Some(t) = target_probs {
                obd.target_probs = t;
            }
            if on_policy.is_some() {
                obd.on_policy = on_policy;
            }
            if ground_truth.is_some() {
                obd.ground_truth = ground_truth;
            }
            if max_rows.is_some() {
                obd.max_rows = max_rows;
            }
            if let Some(s) = sample_size {
                obd.sample_size = s;
            }
            if let Some(r) = runs {
                obd.runs = r;
            }
            if obd.data.as_os_str().is_empty() || obd.target_probs.as_os_str().is_empty() {
                return Err(HarnessError::Config("obd needs --data and --target-probs".into()));
            }
            config.sweep = None;
            config.obd = Some(obd);
            let result = run_obd(&config)?;
            finish(&out_dir, &result, &config)
        }
        Command::Surrogate { dir, rows, on_policy_rows } => {
            let spec = SurrogateSpec {
                rows,
                on_policy_rows,
                context_dim: config.env.context_dim,
                num_actions: config.env.num_actions,
                epsilon: config.env.epsilon,
                seed: config.seed,
            };
            let files = write_surrogate(&dir, &spec)?;
            println!(
                "wrote {}, {}, {} and {}",
                files.data.display(),
                files.on_policy.display(),
                files.target_probs.display(),
                files.mapping.display()
            );
            Ok(())
        }
        Command::Report { dir } => report(&dir),
    }
}

fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let base = Preset::parse(&c.preset)?.config();
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p, base)?,
        None => base,
    };
    macro_rules! set {
        ($flag:expr => $($field:tt)+) => {
            if let Some(v) = $flag.clone() {
                cfg.$($field)+ = v;
            }
        };
    }
    set!(c.seed => seed);
    set!(c.trials => trials);
    set!(c.n => n);
    set!(c.num_actions => env.num_actions);
    set!(c.context_dim => env.context_dim);
    set!(c.epsilon => env.epsilon);
    set!(c.reward_std => env.reward_std);
    set!(c.rho => train.rho);
    set!(c.gamma => train.gamma);
    set!(c.iterations => train.iterations);
    set!(c.hidden => train.hidden);
    set!(c.learning_rate => train.learning_rate);
    set!(c.ground_truth_mc => ground_truth_mc);
    set!(c.bootstrap_resamples => bootstrap_resamples);
    if c.independent_dm {
        cfg.independent_dm = true;
    }
    if let Some(names) = &c.estimators {
        cfg.estimators = names
            .iter()
            .map(|n| n.parse::<EstimatorKind>().map_err(|e| HarnessError::Config(e.to_string())))
            .collect::<Result<_>>()?;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(out_dir: &Path, result: &crate::ExperimentResult, config: &ExperimentConfig) -> Result<()> {
    let written = write_outputs(out_dir, result, config)?;
    print!("{}", format_table(&result.rows));
    if let Some(cdf) = &result.cdf {
        for t in &cdf.tables {
            println!("{:<10} relative-error CDF at ratio 1: {:.3}", t.estimator, t.cdf_at(1.0));
        }
    }
    info!("wrote {} files to {}", written.files.len(), out_dir.display());
    Ok(())
}

fn verify(config: &ExperimentConfig, instances: usize, samples: usize, out_dir: &Path) -> Result<()> {
    if instances == 0 || samples == 0 {
        return Err(HarnessError::Config("instances and samples must be positive".into()));
    }
    let mut rng = RngSeed(config.seed).rng();
    let report = identity_suite(&mut rng, instances, samples);
    println!("instances:                 {}", report.instances);
    println!("max bias identity gap:     {:.3e}", report.max_bias_gap);
    println!("max variance identity gap: {:.3e}", report.max_variance_gap);
    println!("bias bound violations:     {}", report.bias_bound_violations);
    println!("variance bound violations: {}", report.variance_bound_violations);
    for f in &report.failures {
        println!("failure: {f}");
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let path = out_dir.join("verify.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    if report.passed() {
        println!("all identities hold");
        Ok(())
    } else {
        Err(HarnessError::Verification("oracle identity suite failed".into()))
    }
}

/// Retrains the CAEL-MIPS models of trial 0 exactly as the experiment did.
fn save_checkpoint(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let root = RngSeed(config.seed);
    let problem = SyntheticProblem::new(&config.env, root.derive(crate::experiment::ENV_STREAM))?;
    let seed = trial_seed(root, 0);
    let data = problem.env.generate_dataset(&problem.behavior, config.n, seed.derive(0))?;
    let train = cael_core::models::TrainConfig { seed: seed.derive(1), ..config.train.clone() };
    let models = train_embeddings(&data, &problem.target, &problem.behavior, &train)?;
    Checkpoint { net: models.net, posterior: models.posterior }.save(path)?;
    info!("saved checkpoint to {}", path.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    let cdf_path = dir.join("cdf.csv");
    let cdf = if cdf_path.exists() { Some(read_cdf(&cdf_path)?) } else { None };
    print!("{}", format_table(&rows));
    if let Some(tables) = &cdf {
        for t in tables {
            println!("{:<10} relative-error CDF at ratio 1: {:.3}", t.estimator, t.cdf_at(1.0));
        }
    }
    for (name, svg) in charts(&rows, cdf.as_deref()) {
        let p = dir.join(name);
        std::fs::write(&p, svg).map_err(|e| io_error(&p, e))?;
    }
    Ok(())
}
