//! Library side of the `simulate` binary: config parsing, experiment drivers
//! and output writers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod presets;
pub mod run;
pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Instant;

use config::ConfigFile;
use output::{Metadata, Row};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

impl CliError {
    /// 2 for bad input, 3 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => 2,
            CliError::Io(_) | CliError::Numerical(_) => 3,
        }
    }
}

impl From<mqc_echo::Error> for CliError {
    fn from(e: mqc_echo::Error) -> Self {
        match e {
            mqc_echo::Error::InvalidParameter(_) => CliError::Schema(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub const OUT_DIR_ENV: &str = "SIMULATE_OUT_DIR";

/// Command-line overrides of the file-level settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub svg: bool,
}

/// Where a finished (or failed) run left its files.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub svg: Option<PathBuf>,
    pub rows: usize,
    pub warnings: Vec<String>,
}

/// `--out`, then `SIMULATE_OUT_DIR`, then the config's `out_dir`, then `out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ConfigFile) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.out_dir.as_deref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs every entry of `cfg` and writes `<name>.csv` and `<name>.meta.json`.
/// On error the rows computed so far are still written, together with a
/// `<name>.FAILED` marker.
pub fn execute(mut cfg: ConfigFile, ov: &Overrides) -> Result<Outcome, CliError> {
    if let Some(seed) = ov.seed {
        for (i, r) in cfg.runs.iter_mut().enumerate() {
            r.rng_seed = seed.wrapping_add(i as u64);
        }
    }
    let workers = ov
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(CliError::Schema("workers must be >= 1".into()));
    }
    let out_dir = resolve_out_dir(ov.out_dir.as_deref(), &cfg);
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let started = Instant::now();
    let mut sink = run::Sink::default();
    let result = pool.install(|| {
        for r in &cfg.runs {
            log::info!("{} run {}", r.experiment.name(), r.label.as_deref().unwrap_or("-"));
            run::run(r, &mut sink)?;
        }
        Ok::<(), CliError>(())
    });

    let file = |ext: &str| out_dir.join(format!("{}.{ext}", cfg.name));
    let csv = file("csv");
    let metadata = file("meta.json");
    let failed = file("FAILED");
    let _ = std::fs::remove_file(&failed);

    write_rows(&csv, &sink.rows)?;
    let meta = Metadata {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: if result.is_ok() { "ok" } else { "failed" }.to_string(),
        config: serde_json::to_value(&cfg).map_err(|e| CliError::Io(e.to_string()))?,
        seed: cfg.runs[0].rng_seed,
        workers,
        wall_clock_s: started.elapsed().as_secs_f64(),
        rows: sink.rows.len(),
        warnings: sink.warnings.clone(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::write(&metadata, text + "\n")?;

    if let Err(e) = result {
        std::fs::write(&failed, format!("{e}\n"))?;
        return Err(e);
    }

    let svg = if ov.svg || cfg.svg {
        let p = file("svg");
        std::fs::write(&p, output::svg(&sink.rows, &cfg.name))?;
        Some(p)
    } else {
        None
    };
    Ok(Outcome {
        csv,
        metadata,
        svg,
        rows: sink.rows.len(),
        warnings: sink.warnings,
    })
}

fn write_rows(path: &Path, rows: &[Row]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    output::write_csv(std::io::BufWriter::new(file), rows)
}
