use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;
mod error;
mod output;

use config::{RunConfig, Units};
use dipolarbus::error_model::PresetName;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dipolarbus",
    version,
    about = "Dipolar-crystal quantum bus simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "DIPOLARBUS_WORKERS")]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Validate and echo the effective config without computing.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full protocol and gate analysis for one chain.
    GateRun,
    /// Fidelity against gap * t0 over an Omega0 grid, with the exponential fit.
    LzSweep {
        /// Comma-separated Omega0 values (overrides the config grid).
        #[arg(long, value_delimiter = ',')]
        omega0_grid: Option<Vec<f64>>,
    },
    /// Disorder ensemble over seeded realizations.
    Ensemble {
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Maximum fidelity against the single-particle decoherence rate.
    ErrorCurve {
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Comma-separated gamma0 values (Hz for presets, internal otherwise).
        #[arg(long, value_delimiter = ',')]
        gamma0_grid: Option<Vec<f64>>,
    },
    /// Classical ground-state oracles.
    Oracle {
        #[arg(value_enum)]
        kind: OracleKind,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Rydberg,
    Nv,
}

impl From<PresetArg> for PresetName {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Rydberg => PresetName::Rydberg,
            PresetArg::Nv => PresetName::Nv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Spacing,
    Lattice,
    Continuum,
    Scaling,
}

fn load_config(common: &Common, preset: Option<PresetName>) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            RunConfig::from_json(&text)?
        }
        None if preset.is_some() => RunConfig {
            version: config::SCHEMA_VERSION,
            seed: 0,
            units: Units::Internal,
            geometry: None,
            basis: dipolarbus::ensemble::BasisSpec::Full,
            drive: None,
            protocol: Default::default(),
            analysis: Default::default(),
        },
        None => return Err(CliError::Usage("--config FILE is required".into())),
    };
    if let Some(name) = preset {
        match &cfg.units {
            Units::Preset { name: existing, .. } if *existing != name => {
                return Err(CliError::Usage(format!(
                    "--preset {name:?} conflicts with config units preset {existing:?}"
                )));
            }
            Units::Preset { .. } => {}
            Units::Internal => {
                cfg.units = Units::Preset {
                    name,
                    overrides: Default::default(),
                }
            }
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = &cli.common;
    if let Some(k) = common.workers {
        if k == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let preset = match &cli.command {
        Command::ErrorCurve { preset, .. } => preset.map(PresetName::from),
        _ => None,
    };
    let mut cfg = load_config(common, preset)?;
    let ctx = commands::Context {
        out: common.out.clone(),
        dry_run: common.dry_run,
    };
    match cli.command {
        Command::GateRun => commands::gate_run(&ctx, &cfg),
        Command::LzSweep { omega0_grid } => commands::lz_sweep(&ctx, &mut cfg, omega0_grid),
        Command::Ensemble { realizations } => commands::ensemble(&ctx, &mut cfg, realizations),
        Command::ErrorCurve { gamma0_grid, .. } => {
            commands::error_curve(&ctx, &mut cfg, gamma0_grid)
        }
        Command::Oracle { kind } => commands::oracle(&ctx, &cfg, kind),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
