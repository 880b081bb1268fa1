use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rscp_harness::commands::{self, Artifact, OracleTables, Rule, SetsFile};
use rscp_harness::formats::{read_json, read_labels};
use rscp_harness::ExperimentConfig;

/// Robust conformal prediction: calibration, prediction, experiments and
/// the analytic 1-D oracle.
#[derive(Debug, Parser)]
#[command(name = "rscp", version)]
struct Cli {
    /// Experiment configuration (JSON); defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (a directory for `synthetic1d`); stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate on a score file and its labels; writes an artifact.
    Calibrate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Build prediction sets for a score file from an artifact.
    Predict {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// rscp_plus (default for robust artifacts) or rscp.
        #[arg(long, value_parser = parse_rule)]
        rule: Option<Rule>,
    },
    /// Coverage and size of prediction sets against labels.
    Eval {
        #[arg(long)]
        sets: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Run the configured repeated-split experiment and write its report.
    Run,
    /// Write the 1-D oracle size and failure-case tables as CSV.
    Synthetic1d {
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        /// Noise variances of the size table.
        #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.001, 0.0001])]
        sigma2: Vec<f64>,
        /// Noise levels of the failure-case table.
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3])]
        failure_sigma: Vec<f64>,
    },
    /// Fine-tune the blob classifier with robust conformal training.
    TrainRct {
        /// Training settings (JSON); derived from the experiment
        /// configuration when omitted.
        #[arg(long)]
        rct: Option<PathBuf>,
    },
    /// Certified-rule runs across Monte-Carlo sample counts, with and
    /// without the score transformation.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [64, 256, 1024])]
        n_mc: Vec<usize>,
    },
}

fn parse_rule(s: &str) -> Result<Rule, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown rule {s:?}"))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("outputs always serialize")
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Returns whether every configured check passed.
fn run(cli: &Cli) -> anyhow::Result<bool> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Calibrate { scores, labels } => {
            let cfg = load_config(cli)?;
            emit(out, &json(&commands::calibrate(&cfg, scores, labels)?))?;
        }
        Command::Predict { artifact, scores, rule } => {
            let art: Artifact = read_json(artifact)?;
            emit(out, &json(&commands::predict(&art, scores, *rule)?))?;
        }
        Command::Eval { sets, labels } => {
            let sets: SetsFile = read_json(sets)?;
            let k = sets.sets.first().map(|s| s.num_classes());
            emit(out, &json(&commands::eval(&sets, &read_labels(labels, k)?)?))?;
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let report = rscp_harness::run_experiment(&cfg)?;
            emit(out, &report.to_json())?;
            if let Err(e) = report.check_aggregates() {
                log::error!("aggregate check failed: {e}");
                return Ok(false);
            }
            if !report.succeeded() {
                log::error!("{} of {} splits failed", report.body.failures.len(), cfg.n_splits);
                return Ok(false);
            }
        }
        Command::Synthetic1d { alpha, epsilon, sigma2, failure_sigma } => {
            let tables = OracleTables {
                alpha: *alpha,
                epsilon: *epsilon,
                sigma2: sigma2.clone(),
                failure_sigmas: failure_sigma.clone(),
            };
            let dir = out.unwrap_or(Path::new("."));
            commands::synthetic1d(&tables, dir)?;
            log::info!("wrote {} and {} to {}", commands::SIZE_TABLE_FILE, commands::FAILURE_TABLE_FILE, dir.display());
        }
        Command::TrainRct { rct } => {
            let cfg = load_config(cli)?;
            let mut rct_cfg = match rct {
                Some(p) => read_json(p)?,
                None => commands::rct_config_for(&cfg),
            };
            if let Some(seed) = cli.seed {
                rct_cfg.seed = seed;
            }
            emit(out, &json(&commands::train_rct_command(&cfg, &rct_cfg)?))?;
        }
        Command::Bench { n_mc } => {
            if n_mc.is_empty() {
                bail!("--n-mc needs at least one value");
            }
            let cfg = load_config(cli)?;
            let rows = commands::bench(&cfg, n_mc)?;
            emit(out, &json(&rows))?;
            if rows.iter().any(|r| r.failed_splits > 0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
