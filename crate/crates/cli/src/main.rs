use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use noisyfeat::harness::{emit_report, load_report, Experiment, ExperimentConfig, SweepReport};
use noisyfeat::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "noisyfeat",
    version,
    about = "Detect, grade and correct noisy features with kNN imputation"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON, one field per ExperimentConfig field).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// File listing the features to keep, one per line; overrides the config.
    #[arg(long, global = true)]
    features: Option<PathBuf>,
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Prune, split and scale; writes subset CSVs, scaler parameters and the pruning log.
    Ingest,
    /// Imputation R² per (feature, train size, seed), plus the correlation-vs-R² report.
    Baseline,
    /// Detectability over the sigma and train-size ladders.
    DetectSweep {
        /// Also write every trial's per-feature EMD values.
        #[arg(long)]
        trials: bool,
    },
    /// Recoverability per (feature, sigma, seed) at the full train size.
    RecoverSweep,
    /// Correction accuracy of the recoverable samples at `correction_sigma`.
    CorrectEval {
        /// Also write one CSV row per corrected sample.
        #[arg(long)]
        per_sample: bool,
    },
    /// Re-emit JSON reports as JSON + CSV.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Io => 3,
            })
        }
    }
}

fn run(cli: Cli) -> noisyfeat::Result<Vec<PathBuf>> {
    let g = &cli.global;
    if let Command::Report { reports } = &cli.command {
        return rerender(reports, g.out.as_deref());
    }

    let mut config = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => return Err(Error::Config("--config is required".into())),
    };
    if let Some(seed) = g.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    if let Some(features) = &g.features {
        config.kept_features_path = Some(features.clone());
    }
    config.validate()?;
    let out = config.output_dir.clone();

    let mut exp = Experiment::load(config)?;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        exp = exp.with_threads(n)?;
    }
    info!(
        "{} rows, {} features kept, {} dropped",
        exp.data().n_rows(),
        exp.feature_names().len(),
        exp.dropped().len()
    );

    match cli.command {
        Command::Ingest => exp.write_ingest(&out),
        Command::Baseline => {
            let baseline = exp.run_baseline_eval()?;
            let correlation = exp.correlation_from_baseline(&baseline)?;
            let mut paths = emit_report(&baseline, &out)?;
            paths.extend(emit_report(&correlation, &out)?);
            Ok(paths)
        }
        Command::DetectSweep { trials } => {
            let run = exp.run_detection_sweep()?;
            let mut paths = emit_report(&run.report, &out)?;
            if trials {
                let path = out.join(format!(
                    "detection_trials_seed{}.json",
                    run.report.master_seed
                ));
                let json = serde_json::to_string_pretty(&run.trials)? + "\n";
                std::fs::write(&path, json).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                paths.push(path);
            }
            Ok(paths)
        }
        Command::RecoverSweep => emit_report(&exp.run_recoverability_sweep()?, &out),
        Command::CorrectEval { per_sample } => {
            let run = exp.run_correction_eval()?;
            let mut paths = emit_report(&run.report, &out)?;
            if per_sample {
                let path = out.join(format!(
                    "correction_samples_seed{}.csv",
                    run.report.master_seed
                ));
                run.write_samples_csv(&path)?;
                paths.push(path);
            }
            Ok(paths)
        }
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn rerender(reports: &[PathBuf], out: Option<&Path>) -> noisyfeat::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for path in reports {
        let report: SweepReport = load_report(path)?;
        let dir = match out {
            Some(dir) => dir.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        paths.extend(emit_report(&report, dir)?);
    }
    Ok(paths)
}
