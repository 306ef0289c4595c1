use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mqc_echo_cli::config::{ConfigFile, Experiment};
use mqc_echo_cli::{execute, presets, CliError, Overrides};

/// Echo simulations of collective Ising dynamics.
#[derive(Parser)]
#[command(name = "simulate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unitary echo fidelity against the rotation angle.
    FidelitySweep(RunArgs),
    /// Unitary echo magnetization against the rotation angle.
    MagnetizationSweep(RunArgs),
    /// Multiple-quantum spectra across arm times.
    SpectrumVsTime(RunArgs),
    /// Echo with single-spin decoherence.
    LindbladRun(RunArgs),
    /// Echo with spin-phonon coupling and noise.
    PhononRun(RunArgs),
    /// Fidelity estimate from photon-count histograms.
    HistogramFit(RunArgs),
    /// Small-N cross-checks between engines.
    Verify(RunArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration by name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: $SIMULATE_OUT_DIR, then the config, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a quick-look SVG.
    #[arg(long)]
    svg: bool,
}

fn load(kind: Experiment, a: &RunArgs) -> Result<ConfigFile, CliError> {
    let cfg = match (&a.config, &a.preset) {
        (Some(p), _) => ConfigFile::load(p)?,
        (None, Some(name)) => presets::load(name)?,
        (None, None) if kind == Experiment::Verify => presets::load("verify")?,
        (None, None) => return Err(CliError::Schema("pass --config FILE or --preset NAME".into())),
    };
    if cfg.experiment() != kind {
        return Err(CliError::Schema(format!(
            "config describes a {} run, not {}",
            cfg.experiment().name(),
            kind.name()
        )));
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::FidelitySweep(a) => (Experiment::FidelitySweep, a),
        Command::MagnetizationSweep(a) => (Experiment::MagnetizationSweep, a),
        Command::SpectrumVsTime(a) => (Experiment::SpectrumVsTime, a),
        Command::LindbladRun(a) => (Experiment::LindbladRun, a),
        Command::PhononRun(a) => (Experiment::PhononRun, a),
        Command::HistogramFit(a) => (Experiment::HistogramFit, a),
        Command::Verify(a) => (Experiment::Verify, a),
        Command::Presets => {
            for (name, text) in presets::PRESETS {
                let kind = ConfigFile::parse(text, name).map(|c| c.experiment().name()).unwrap_or("invalid");
                println!("{name:<10} {kind}");
            }
            return ExitCode::SUCCESS;
        }
    };
    let ov = Overrides {
        seed: args.seed,
        workers: args.workers,
        out_dir: args.out.clone(),
        svg: args.svg,
    };
    match load(kind, &args).and_then(|cfg| execute(cfg, &ov)) {
        Ok(out) => {
            println!("wrote {} rows to {}", out.rows, out.csv.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("simulate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
