//! Run configuration: one JSON file holding a single run or a list of runs.

use std::path::Path;

use mqc_echo::detect::DetectionParams;
use mqc_echo::lindblad::DecoherenceRates;
use mqc_echo::phonon::{NoiseMode, NoiseParams, DEFAULT_T_PI};
use mqc_echo::protocol::{cat_time, coupling_from_drive, default_phi_grid, uniform_phi_grid};
use serde::{Deserialize, Serialize};

use crate::CliError;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FidelitySweep,
    MagnetizationSweep,
    SpectrumVsTime,
    LindbladRun,
    PhononRun,
    HistogramFit,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::FidelitySweep => "fidelity-sweep",
            Experiment::MagnetizationSweep => "magnetization-sweep",
            Experiment::SpectrumVsTime => "spectrum-vs-time",
            Experiment::LindbladRun => "lindblad-run",
            Experiment::PhononRun => "phonon-run",
            Experiment::HistogramFit => "histogram-fit",
            Experiment::Verify => "verify",
        }
    }
}

/// How the ODF detuning follows the arm time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeltaRule {
    Fixed { delta: f64 },
    #[default]
    TwoPiOverTau,
    FourPiOverTau,
}

impl DeltaRule {
    pub fn delta(self, tau: f64) -> f64 {
        match self {
            DeltaRule::Fixed { delta } => delta,
            DeltaRule::TwoPiOverTau => TWO_PI / tau,
            DeltaRule::FourPiOverTau => 2.0 * TWO_PI / tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauUnit {
    #[default]
    Seconds,
    /// Multiples of `pi N / (4 J)`; needs a fixed coupling.
    CatTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauList {
    List(Vec<f64>),
    Linspace { start: f64, stop: f64, count: usize },
}

impl TauList {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TauList::List(v) => v.clone(),
            TauList::Linspace { start, stop, count } => match count {
                0 => vec![],
                1 => vec![*start],
                _ => (0..*count)
                    .map(|i| start + (stop - start) * i as f64 / (*count - 1) as f64)
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiGrid {
    Count { count: usize },
    List(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Graph {
    #[default]
    AllToAll,
    /// Open chain with uniform couplings up to `range` sites apart.
    Chain { range: usize },
    /// Circulant `k`-regular ring.
    Regular { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// RMS COM-frequency fluctuation (s^-1).
    #[serde(default)]
    pub delta_com: f64,
    /// RMS qubit-frequency fluctuation (s^-1).
    #[serde(default)]
    pub delta_b: f64,
    #[serde(default = "one")]
    pub sample_count: usize,
    #[serde(default = "monte_carlo")]
    pub mode: NoiseMode,
}

fn one() -> usize {
    1
}

fn monte_carlo() -> NoiseMode {
    NoiseMode::MonteCarlo
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            delta_com: 0.0,
            delta_b: 0.0,
            sample_count: 1,
            mode: NoiseMode::MonteCarlo,
        }
    }
}

impl NoiseConfig {
    pub fn params(&self, seed: u64) -> NoiseParams {
        NoiseParams {
            delta_com: self.delta_com,
            delta_b: self.delta_b,
            sample_count: self.sample_count,
            rng_seed: seed,
            mode: self.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhononConfig {
    #[serde(default = "default_omega_z")]
    pub omega_z: f64,
    #[serde(default = "default_nbar")]
    pub nbar: f64,
    #[serde(default = "default_t_pi")]
    pub t_pi: f64,
    #[serde(default)]
    pub phi1: f64,
    /// Light-scattering rate applied as `e^{-N Gamma tau}` and `e^{-Gamma tau}`.
    #[serde(default)]
    pub gamma: f64,
}

fn default_omega_z() -> f64 {
    TWO_PI * 1.570e6
}

fn default_nbar() -> f64 {
    6.0
}

fn default_t_pi() -> f64 {
    DEFAULT_T_PI
}

impl Default for PhononConfig {
    fn default() -> Self {
        Self {
            omega_z: default_omega_z(),
            nbar: default_nbar(),
            t_pi: default_t_pi(),
            phi1: 0.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistogramSource {
    File { path: String },
    Synthetic {
        fidelities: Vec<f64>,
        trials: u64,
        #[serde(default = "one")]
        n_bright: usize,
        #[serde(default)]
        two_flip: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    Fidelity,
    Magnetization,
}

/// One run. Every field except `experiment` has a default, and the resolved
/// values are echoed into the metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    /// Prefix for the observable names of this run.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub n_spins: usize,
    #[serde(default)]
    pub omega0: Option<f64>,
    /// Fixed Ising coupling `J` (s^-1); otherwise `Omega_0^2 / (2 delta)`.
    #[serde(default)]
    pub coupling: Option<f64>,
    #[serde(default)]
    pub delta_rule: DeltaRule,
    #[serde(default = "empty_taus")]
    pub taus: TauList,
    #[serde(default)]
    pub tau_unit: TauUnit,
    #[serde(default)]
    pub phi_grid: Option<PhiGrid>,
    #[serde(default)]
    pub mid_arm_echo: bool,
    #[serde(default)]
    pub graph: Graph,
    #[serde(default = "no_rates")]
    pub rates: DecoherenceRates,
    /// Static field coefficient `B` (s^-1).
    #[serde(default)]
    pub field_b: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Gauss-Hermite nodes for static field noise in the Lindblad solver.
    #[serde(default = "default_nodes")]
    pub hermite_nodes: usize,
    #[serde(default)]
    pub phonon: PhononConfig,
    #[serde(default)]
    pub observables: Option<Vec<ObservableName>>,
    /// Also emit `I_m` / `A_m`, on a finer grid when the sweep grid is too coarse.
    #[serde(default)]
    pub spectrum: bool,
    /// Emit reference `I_0` curves next to the spectrum.
    #[serde(default)]
    pub analytic: bool,
    #[serde(default)]
    pub detection: Option<DetectionParams>,
    #[serde(default)]
    pub histogram: Option<HistogramSource>,
    #[serde(default)]
    pub rng_seed: u64,
}

fn empty_taus() -> TauList {
    TauList::List(vec![])
}

fn no_rates() -> DecoherenceRates {
    DecoherenceRates::none()
}

fn default_nodes() -> usize {
    21
}

/// Config file contents, normalized to a list of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub name: String,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub svg: bool,
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    out_dir: Option<String>,
    #[serde(default)]
    svg: bool,
    runs: Vec<RunConfig>,
}

impl ConfigFile {
    pub fn parse(text: &str, fallback_name: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
        let cfg = if value.get("runs").is_some() {
            let m: MultiFile = serde_json::from_value(value).map_err(|e| CliError::Schema(e.to_string()))?;
            ConfigFile {
                name: m.name.unwrap_or_else(|| fallback_name.to_string()),
                workers: m.workers,
                out_dir: m.out_dir,
                svg: m.svg,
                runs: m.runs,
            }
        } else {
            // single run; file-level keys sit next to the run keys
            let mut obj = value;
            let take = |o: &mut serde_json::Value, k: &str| o.as_object_mut().and_then(|m| m.remove(k));
            let name = take(&mut obj, "name").and_then(|v| v.as_str().map(String::from));
            let workers = take(&mut obj, "workers").and_then(|v| v.as_u64()).map(|w| w as usize);
            let out_dir = take(&mut obj, "out_dir").and_then(|v| v.as_str().map(String::from));
            let svg = take(&mut obj, "svg").and_then(|v| v.as_bool()).unwrap_or(false);
            let run: RunConfig = serde_json::from_value(obj).map_err(|e| CliError::Schema(e.to_string()))?;
            ConfigFile {
                name: name.unwrap_or_else(|| fallback_name.to_string()),
                workers,
                out_dir,
                svg,
                runs: vec![run],
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        Self::parse(&text, stem)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.runs.is_empty() {
            return Err(CliError::Schema("config has no runs".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(CliError::Schema(format!("name {:?} is not a plain file stem", self.name)));
        }
        if self.workers == Some(0) {
            return Err(CliError::Schema("workers must be >= 1".into()));
        }
        let kind = self.runs[0].experiment;
        for r in &self.runs {
            if r.experiment != kind {
                return Err(CliError::Schema("all runs in one file must share the experiment kind".into()));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        self.runs[0].experiment
    }
}

/// Coupling and drive for one arm time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub delta: f64,
    pub coupling: f64,
    pub omega0: f64,
}

impl RunConfig {
    fn schema(msg: impl Into<String>) -> CliError {
        CliError::Schema(msg.into())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        use Experiment::*;
        let needs_spins = !matches!(self.experiment, HistogramFit | Verify);
        if needs_spins {
            if self.n_spins == 0 {
                return Err(Self::schema("n_spins must be >= 1"));
            }
            if self.coupling.is_none() && self.omega0.is_none() {
                return Err(Self::schema("set either coupling or omega0"));
            }
            if self.coupling.is_some() && self.omega0.is_some() && self.experiment != PhononRun {
                return Err(Self::schema("set only one of coupling and omega0"));
            }
            let taus = self.taus.values();
            if taus.is_empty() {
                return Err(Self::schema("taus is empty"));
            }
            if taus.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(Self::schema("taus must be finite and >= 0"));
            }
            if self.tau_unit == TauUnit::CatTime && self.coupling.is_none() {
                return Err(Self::schema("tau_unit cat_time needs a fixed coupling"));
            }
            if let DeltaRule::Fixed { delta } = self.delta_rule {
                if !(delta != 0.0 && delta.is_finite()) {
                    return Err(Self::schema("fixed delta must be finite and non-zero"));
                }
            } else if self.coupling.is_none() && taus.contains(&0.0) {
                return Err(Self::schema("delta rule tied to tau needs tau > 0"));
            }
            if let Some(PhiGrid::Count { count: 0 }) = self.phi_grid {
                return Err(Self::schema("phi grid is empty"));
            }
            self.rates.validate().map_err(|e| Self::schema(e.to_string()))?;
            self.noise.params(0).validate().map_err(|e| Self::schema(e.to_string()))?;
        }
        if self.graph != Graph::AllToAll
            && !matches!(self.experiment, FidelitySweep | MagnetizationSweep | SpectrumVsTime)
        {
            return Err(Self::schema("coupling graphs are supported by the unitary sweeps only"));
        }
        match self.experiment {
            PhononRun => {
                let p = &self.phonon;
                if !(p.omega_z > 0.0) || !(p.nbar >= 0.0) || !(p.t_pi >= 0.0) || !(p.gamma >= 0.0) {
                    return Err(Self::schema("phonon: need omega_z > 0 and nbar, t_pi, gamma >= 0"));
                }
            }
            HistogramFit => {
                if self.histogram.is_none() {
                    return Err(Self::schema("histogram-fit needs a histogram source"));
                }
            }
            LindbladRun if self.n_spins > 160 => {
                return Err(Self::schema("lindblad-run supports at most 160 spins"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn drive(&self, tau: f64) -> Drive {
        let delta = self.delta_rule.delta(tau);
        match (self.coupling, self.omega0) {
            (Some(j), w) => Drive {
                delta,
                coupling: j,
                omega0: w.unwrap_or_else(|| (2.0 * delta * j).abs().sqrt()),
            },
            (None, Some(w)) => Drive {
                delta,
                coupling: coupling_from_drive(w, delta),
                omega0: w,
            },
            (None, None) => unreachable!("validated"),
        }
    }

    /// Arm times in seconds.
    pub fn taus_seconds(&self) -> Vec<f64> {
        let raw = self.taus.values();
        match self.tau_unit {
            TauUnit::Seconds => raw,
            TauUnit::CatTime => {
                let t_cat = cat_time(self.n_spins, self.coupling.unwrap_or(0.0)).unwrap_or(f64::NAN);
                raw.into_iter().map(|x| x * t_cat).collect()
            }
        }
    }

    pub fn phis(&self) -> Vec<f64> {
        match &self.phi_grid {
            None => default_phi_grid(self.n_spins),
            Some(PhiGrid::Count { count }) => uniform_phi_grid(*count),
            Some(PhiGrid::List(v)) => v.clone(),
        }
    }

    pub fn observables(&self) -> Vec<ObservableName> {
        match (&self.observables, self.experiment) {
            (Some(v), _) => v.clone(),
            (None, Experiment::FidelitySweep) => vec![ObservableName::Fidelity],
            (None, Experiment::MagnetizationSweep) => vec![ObservableName::Magnetization],
            (None, _) => vec![ObservableName::Fidelity, ObservableName::Magnetization],
        }
    }

    pub fn detection_params(&self) -> DetectionParams {
        self.detection.unwrap_or_default()
    }
}
