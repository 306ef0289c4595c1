//! Experiment drivers. Each pushes rows into a [`Sink`] as soon as one arm
//! time is finished, so a failure keeps everything computed before it.

use mqc_echo::bruteforce::{echo_general, fidelity_spectrum_general, magnetization_otoc_general, CouplingMatrix};
use mqc_echo::detect::{fit_fidelity_with, naive_fidelity, select_threshold, synthesize_histogram, BrightModel, CountHistogram};
use mqc_echo::lindblad::{mqc_with_decoherence, mqc_with_field_noise, EffectiveField};
use mqc_echo::phonon::{phonon_sweep, Observable, PhononParams, ScatteringDecay};
use mqc_echo::protocol::{
    correlation_spectrum, i0_approx, i0_exact, min_phi_samples, mqc_spectrum, p_n_distribution, run_echo,
    uniform_phi_grid, EchoSequence,
};
use mqc_echo::{Axis, CorrelationSpectrum, MqcSpectrum};

use crate::config::{Experiment, Graph, HistogramSource, ObservableName, RunConfig};
use crate::output::Row;
use crate::CliError;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Default)]
pub struct Sink {
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

impl Sink {
    fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        if !self.warnings.contains(&w) {
            log::warn!("{w}");
            self.warnings.push(w);
        }
    }
}

struct Namer<'a>(Option<&'a str>);

impl Namer<'_> {
    fn name(&self, obs: &str) -> String {
        match self.0 {
            Some(l) => format!("{l}/{obs}"),
            None => obs.to_string(),
        }
    }
}

fn spectral_grid(phis: &[f64], n: usize) -> Option<Vec<f64>> {
    (phis.len() < min_phi_samples(n)).then(|| uniform_phi_grid(min_phi_samples(n)))
}

fn push_im(sink: &mut Sink, nm: &Namer, n: usize, tau: f64, s: &MqcSpectrum) {
    for (m, v) in s.orders() {
        sink.rows.push(Row::scalar(n, Some(tau), nm.name(&format!("I_{m}")), v));
    }
}

/// Real parts as `A_m`; imaginary parts as `A_m_im` once they exceed 1e-8.
fn push_am(sink: &mut Sink, nm: &Namer, n: usize, tau: f64, s: &CorrelationSpectrum) {
    let complex = s.imag_residual() >= 1e-8;
    if complex {
        sink.warn(format!("{} is complex at some arm times, imaginary parts written as A_m_im", nm.name("A_m")));
    }
    for (m, v) in s.orders() {
        sink.rows.push(Row::scalar(n, Some(tau), nm.name(&format!("A_{m}")), v.re));
        if complex {
            sink.rows.push(Row::scalar(n, Some(tau), nm.name(&format!("A_{m}_im")), v.im));
        }
    }
}

pub fn run(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    match cfg.experiment {
        Experiment::FidelitySweep | Experiment::MagnetizationSweep => unitary_sweep(cfg, sink),
        Experiment::SpectrumVsTime => spectrum_vs_time(cfg, sink),
        Experiment::LindbladRun => lindblad_run(cfg, sink),
        Experiment::PhononRun => phonon_run(cfg, sink),
        Experiment::HistogramFit => histogram_fit(cfg, sink),
        Experiment::Verify => verify(sink),
    }
}

fn coupling_matrix(cfg: &RunConfig, j: f64) -> Result<CouplingMatrix, CliError> {
    let n = cfg.n_spins;
    Ok(match cfg.graph {
        Graph::AllToAll => CouplingMatrix::all_to_all(n, j),
        Graph::Chain { range } => CouplingMatrix::chain(n, range, j),
        Graph::Regular { k } => CouplingMatrix::regular(n, k, j)?,
    })
}

/// Fidelity and magnetization per angle, from the collective engine or the
/// full state vector for non-uniform graphs.
fn pure_echo(cfg: &RunConfig, j: f64, tau: f64, phis: &[f64]) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    if cfg.graph == Graph::AllToAll {
        let seq = EchoSequence::new(cfg.n_spins, j, tau)?
            .with_phi_grid(phis.to_vec())
            .with_mid_arm_echo(cfg.mid_arm_echo);
        let r = run_echo(&seq)?;
        Ok((r.fidelity, r.magnetization))
    } else {
        let g = coupling_matrix(cfg, j)?;
        let echo = cfg.mid_arm_echo.then_some(Axis::X);
        let mut f = Vec::with_capacity(phis.len());
        let mut m = Vec::with_capacity(phis.len());
        for &phi in phis {
            let r = echo_general(&g, tau, phi, echo)?;
            f.push(r.fidelity);
            m.push(r.magnetization);
        }
        Ok((f, m))
    }
}

fn pure_spectra(cfg: &RunConfig, j: f64, tau: f64, phis: &[f64]) -> Result<(MqcSpectrum, CorrelationSpectrum), CliError> {
    let n = cfg.n_spins;
    if cfg.graph != Graph::AllToAll && !cfg.mid_arm_echo {
        let g = coupling_matrix(cfg, j)?;
        return Ok((
            fidelity_spectrum_general(&g, tau, phis)?,
            magnetization_otoc_general(&g, tau, phis)?,
        ));
    }
    let (f, m) = pure_echo(cfg, j, tau, phis)?;
    let fs: Vec<(f64, f64)> = phis.iter().copied().zip(f).collect();
    let ms: Vec<(f64, f64)> = phis.iter().copied().zip(m).collect();
    Ok((mqc_spectrum(&fs, n, tau)?, correlation_spectrum(&ms, n, tau)?))
}

fn unitary_sweep(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let n = cfg.n_spins;
    let nm = Namer(cfg.label.as_deref());
    let phis = cfg.phis();
    let obs = cfg.observables();
    for tau in cfg.taus_seconds() {
        let j = cfg.drive(tau).coupling;
        let (f, m) = pure_echo(cfg, j, tau, &phis)?;
        for (i, &phi) in phis.iter().enumerate() {
            if obs.contains(&ObservableName::Fidelity) {
                sink.rows.push(Row::at(n, tau, phi, nm.name("fidelity"), f[i]));
            }
            if obs.contains(&ObservableName::Magnetization) {
                sink.rows.push(Row::at(n, tau, phi, nm.name("magnetization"), m[i]));
            }
        }
        if cfg.spectrum {
            let grid = spectral_grid(&phis, n).unwrap_or_else(|| phis.clone());
            let (im, am) = pure_spectra(cfg, j, tau, &grid)?;
            if obs.contains(&ObservableName::Fidelity) {
                push_im(sink, &nm, n, tau, &im);
            }
            if obs.contains(&ObservableName::Magnetization) {
                push_am(sink, &nm, n, tau, &am);
            }
        }
    }
    Ok(())
}

/// `sum_{n <= terms} P_n^2`.
fn i0_series(n: usize, j: f64, tau: f64, terms: usize) -> Result<f64, CliError> {
    let p = p_n_distribution(n, j, tau)?;
    Ok(p.iter().take(terms + 1).map(|x| x * x).sum())
}

fn analytic_rows(cfg: &RunConfig, sink: &mut Sink, nm: &Namer, j: f64, tau: f64) -> Result<(), CliError> {
    let n = cfg.n_spins;
    if cfg.graph != Graph::AllToAll {
        return Ok(());
    }
    let pure = i0_exact(n, j, tau)?;
    let approx = i0_approx(j, tau);
    sink.rows.push(Row::scalar(n, Some(tau), nm.name("I0_pure"), pure));
    sink.rows.push(Row::scalar(n, Some(tau), nm.name("I0_approx"), approx));
    for terms in 0..=2 {
        let v = i0_series(n, j, tau, terms)?;
        sink.rows.push(Row::scalar(n, Some(tau), nm.name(&format!("I0_series_{terms}")), v));
    }
    let g = cfg.rates.total();
    if g > 0.0 {
        let decay = (-(n as f64) * g * tau).exp();
        sink.rows.push(Row::scalar(n, Some(tau), nm.name("I0_decay"), decay * pure));
        sink.rows.push(Row::scalar(n, Some(tau), nm.name("I0_approx_decay"), decay * approx));
    }
    Ok(())
}

fn spectrum_vs_time(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let n = cfg.n_spins;
    let nm = Namer(cfg.label.as_deref());
    let phis = cfg.phis();
    let grid = spectral_grid(&phis, n).unwrap_or(phis);
    let obs = cfg.observables();
    for tau in cfg.taus_seconds() {
        let j = cfg.drive(tau).coupling;
        let (im, am) = pure_spectra(cfg, j, tau, &grid)?;
        if obs.contains(&ObservableName::Fidelity) {
            push_im(sink, &nm, n, tau, &im);
        }
        if obs.contains(&ObservableName::Magnetization) {
            push_am(sink, &nm, n, tau, &am);
        }
        if cfg.analytic {
            analytic_rows(cfg, sink, &nm, j, tau)?;
        }
    }
    Ok(())
}

fn lindblad_run(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let n = cfg.n_spins;
    let nm = Namer(cfg.label.as_deref());
    let phis = cfg.phis();
    let obs = cfg.observables();
    let field = EffectiveField { b: cfg.field_b };
    let noise = cfg.noise.params(cfg.rng_seed);
    if noise.delta_com > 0.0 {
        sink.warn("lindblad-run has no phonon mode; delta_com is ignored");
    }
    let solve = |seq: &EchoSequence| {
        if noise.delta_b > 0.0 {
            mqc_with_field_noise(seq, &cfg.rates, &field, noise.sigma_b(), cfg.hermite_nodes)
        } else {
            mqc_with_decoherence(seq, &cfg.rates, &field)
        }
    };
    for tau in cfg.taus_seconds() {
        let j = cfg.drive(tau).coupling;
        let seq = EchoSequence::new(n, j, tau)?
            .with_phi_grid(phis.clone())
            .with_mid_arm_echo(cfg.mid_arm_echo);
        let r = solve(&seq)?;
        for w in &r.warnings {
            sink.warn(w.clone());
        }
        for (i, &phi) in phis.iter().enumerate() {
            if obs.contains(&ObservableName::Fidelity) {
                sink.rows.push(Row::at(n, tau, phi, nm.name("fidelity"), r.fidelity[i].1));
            }
            if obs.contains(&ObservableName::Magnetization) {
                sink.rows.push(Row::at(n, tau, phi, nm.name("magnetization"), r.magnetization[i].1));
            }
        }
        sink.rows.push(Row::scalar(n, Some(tau), nm.name("purity"), r.purity));
        if cfg.spectrum {
            let fine = match spectral_grid(&phis, n) {
                Some(g) => solve(&seq.clone().with_phi_grid(g))?,
                None => r,
            };
            if obs.contains(&ObservableName::Fidelity) {
                if let Some(s) = &fine.spectrum {
                    push_im(sink, &nm, n, tau, s);
                }
            }
            if obs.contains(&ObservableName::Magnetization) {
                push_am(sink, &nm, n, tau, &correlation_spectrum(&fine.magnetization, n, tau)?);
            }
        }
        if cfg.analytic {
            analytic_rows(cfg, sink, &nm, j, tau)?;
        }
        log::info!("lindblad-run N={n} tau={tau:e} done");
    }
    Ok(())
}

fn phonon_run(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let n = cfg.n_spins;
    let nm = Namer(cfg.label.as_deref());
    let phis = cfg.phis();
    let wanted: Vec<Observable> = cfg
        .observables()
        .into_iter()
        .map(|o| match o {
            ObservableName::Fidelity => Observable::Fidelity,
            ObservableName::Magnetization => Observable::Magnetization,
        })
        .collect();
    let noise = cfg.noise.params(cfg.rng_seed);
    let decay = ScatteringDecay { gamma: cfg.phonon.gamma };
    for tau in cfg.taus_seconds() {
        let d = cfg.drive(tau);
        let p = PhononParams {
            omega0: d.omega0,
            omega_z: cfg.phonon.omega_z,
            delta: d.delta,
            phi1: cfg.phonon.phi1,
            phi2: cfg.phonon.phi1 + TWO_PI * cfg.phonon.t_pi / tau,
            nbar: cfg.phonon.nbar,
            t_pi: cfg.phonon.t_pi,
        };
        let emit = |sink: &mut Sink, grid: &[f64], spectra: bool| -> Result<(), CliError> {
            let r = phonon_sweep(n, &p, tau, grid, &noise, decay, cfg.mid_arm_echo, &wanted)?;
            if let Some(f) = &r.fidelity {
                if spectra {
                    let s: Vec<(f64, f64)> = grid.iter().copied().zip(f.iter().map(|a| a.mean)).collect();
                    push_im(sink, &nm, n, tau, &mqc_spectrum(&s, n, tau)?);
                } else {
                    for (phi, a) in grid.iter().zip(f) {
                        sink.rows.push(Row::at(n, tau, *phi, nm.name("fidelity"), a.mean).with_stderr(a.stderr));
                    }
                }
            }
            if let Some(m) = &r.magnetization {
                if spectra {
                    let s: Vec<(f64, f64)> = grid.iter().copied().zip(m.iter().map(|a| a.mean)).collect();
                    push_am(sink, &nm, n, tau, &correlation_spectrum(&s, n, tau)?);
                } else {
                    for (phi, a) in grid.iter().zip(m) {
                        sink.rows
                            .push(Row::at(n, tau, *phi, nm.name("magnetization"), a.mean).with_stderr(a.stderr));
                    }
                }
            }
            Ok(())
        };
        emit(sink, &phis, false)?;
        if cfg.spectrum {
            let grid = spectral_grid(&phis, n).unwrap_or_else(|| phis.clone());
            emit(sink, &grid, true)?;
        }
        sink.rows.push(Row::scalar(n, Some(tau), nm.name("coupling"), d.coupling));
        log::info!("phonon-run N={n} tau={tau:e} done");
    }
    Ok(())
}

fn histogram_fit(cfg: &RunConfig, sink: &mut Sink) -> Result<(), CliError> {
    let nm = Namer(cfg.label.as_deref());
    let n = cfg.n_spins;
    let fit = |sink: &mut Sink, h: &CountHistogram, p: &mqc_echo::detect::DetectionParams, bright: BrightModel| -> Result<(), CliError> {
        let k = select_threshold(p, bright.n_bright)?;
        let est = fit_fidelity_with(h, p, bright, k)?;
        sink.rows.push(Row::scalar(n, None, nm.name("fidelity_mle"), est.fidelity).with_stderr(est.stderr));
        sink.rows.push(Row::scalar(n, None, nm.name("fidelity_naive"), naive_fidelity(h, k)));
        sink.rows.push(Row::scalar(n, None, nm.name("threshold"), k as f64));
        sink.rows.push(Row::scalar(n, None, nm.name("trials"), h.trials() as f64));
        Ok(())
    };
    match cfg.histogram.as_ref().expect("validated") {
        HistogramSource::File { path } => {
            let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
            let (h, declared) = CountHistogram::read(std::io::BufReader::new(file))?;
            let p = match (cfg.detection, declared) {
                (Some(p), _) => p,
                (None, Some(p)) => p,
                (None, None) => {
                    sink.warn("histogram has no detection header; using defaults");
                    cfg.detection_params()
                }
            };
            fit(sink, &h, &p, BrightModel::default())
        }
        HistogramSource::Synthetic {
            fidelities,
            trials,
            n_bright,
            two_flip,
        } => {
            let p = cfg.detection_params();
            let bright = BrightModel {
                n_bright: *n_bright,
                two_flip: *two_flip,
            };
            for (i, &f) in fidelities.iter().enumerate() {
                let h = synthesize_histogram(f, &p, bright, *trials, cfg.rng_seed.wrapping_add(i as u64))?;
                sink.rows.push(Row::scalar(n, None, nm.name("fidelity_true"), f));
                fit(sink, &h, &p, bright)?;
            }
            Ok(())
        }
    }
}

fn verify(sink: &mut Sink) -> Result<(), CliError> {
    let checks = crate::verify::run_suite();
    let mut failed = Vec::new();
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        sink.rows.push(Row::scalar(c.n_spins, None, format!("{}/error", c.name), c.error));
        sink.rows.push(Row::scalar(c.n_spins, None, format!("{}/tolerance", c.name), c.tolerance));
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("verification failed: {}", failed.join(", "))))
    }
}
