use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use cfmm_core::harness::{run_drop, run_experiment, write_results, ExperimentKind, ExperimentSpec, OutputFormat, Scheme};
use cfmm_core::{rng_from_seed, SolverMode, SystemConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "cfmm", version, about = "User-centric cell-free mmWave MIMO simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write one row per drop (and iteration).
    Run {
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// JSON file with SystemConfig fields; unknown keys are rejected.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 100)]
        drops: usize,
        /// Base seed; drop d uses `seed ^ d`. Defaults to the config's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Schemes to evaluate (default: the experiment's preset).
        #[arg(long, value_enum, value_delimiter = ',')]
        schemes: Vec<SchemeArg>,
    },
    /// Simulate a single drop and print its rates as JSON.
    Drop {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = SchemeArg::Proposed)]
        scheme: SchemeArg,
        /// Include the beam assignment and refinement steps.
        #[arg(long)]
        dump_assignment: bool,
        /// Include the topology and the per-iteration precoder trace.
        #[arg(long)]
        dump_trace: bool,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file.
    ValidateConfig { file: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Convergence,
    Power,
    Antenna,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Proposed,
    IabsOnly,
    ProposedZf,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Proposed => Scheme::Proposed,
            SchemeArg::IabsOnly => Scheme::IabsOnly,
            SchemeArg::ProposedZf => Scheme::ProposedZf,
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<cfmm_core::Error> for Failure {
    fn from(e: cfmm_core::Error) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn load_config(path: &Path) -> Result<SystemConfig, Failure> {
    SystemConfig::from_json_file(path)
        .map_err(|e| Failure::Config(anyhow::Error::new(e).context("cannot load config")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            drops,
            seed,
            out,
            format,
            schemes,
        } => {
            let cfg = load_config(&config)?;
            let kind = match experiment {
                Experiment::Convergence => ExperimentKind::Convergence,
                Experiment::Power => ExperimentKind::PowerSweep,
                Experiment::Antenna => ExperimentKind::AntennaSweep,
            };
            let seed = seed.unwrap_or(cfg.rng_seed);
            let mut spec = ExperimentSpec::preset(kind, cfg, drops, seed);
            if !schemes.is_empty() {
                spec.schemes = schemes.into_iter().map(Scheme::from).collect();
            }
            spec.validate()?;
            let result = run_experiment(&spec)?;
            let format = match format {
                Format::Csv => OutputFormat::Csv,
                Format::Json => OutputFormat::Json,
            };
            write_results(&result, &out, format)?;
            eprintln!("wrote {} rows to {}", result.rows.len(), out.display());
        }
        Command::Drop {
            config,
            seed,
            scheme,
            dump_assignment,
            dump_trace,
            out,
        } => {
            let cfg = match config {
                Some(path) => load_config(&path)?,
                None => SystemConfig::default(),
            };
            let seed = seed.unwrap_or(cfg.rng_seed);
            let scheme = Scheme::from(scheme);
            let mode: SolverMode = cfg.nse_order;
            let (report, trace) = run_drop(&cfg, scheme, mode, &mut rng_from_seed(seed))?;
            let mut doc = json!({
                "seed": seed,
                "scheme": scheme,
                "solver": mode.to_string(),
                "iterations": trace.iterations,
                "flops": trace.flops,
                "sum_rate": report.sum_rate,
                "rate_bps_hz": report.rate_bps_hz,
                "sinr": report.sinr,
            });
            if dump_assignment {
                doc["assignment"] = serde_json::to_value(&trace.assignment).map_err(|e| Failure::Runtime(e.into()))?;
            }
            if dump_trace {
                doc["topology"] = serde_json::to_value(&trace.topology).map_err(|e| Failure::Runtime(e.into()))?;
                doc["history"] = serde_json::to_value(&trace.history).map_err(|e| Failure::Runtime(e.into()))?;
            }
            let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Runtime(e.into()))? + "\n";
            match out {
                Some(path) => fs::write(&path, text)
                    .with_context(|| format!("cannot write {}", path.display()))
                    .map_err(Failure::Runtime)?,
                None => std::io::stdout()
                    .write_all(text.as_bytes())
                    .context("cannot write to stdout")
                    .map_err(Failure::Runtime)?,
            }
        }
        Command::ValidateConfig { file } => {
            load_config(&file)?;
            println!("{}: ok", file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
