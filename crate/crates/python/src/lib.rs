//! Python module `mqc_echo`.

use mqc_echo::detect::{self, BrightModel, CountHistogram};
use mqc_echo::lindblad::{self, EffectiveField};
use mqc_echo::phonon::{self, NoiseMode, Observable, ScatteringDecay};
use mqc_echo::protocol::{self, EchoSequence};
use mqc_echo::{Complex64, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::TooLarge { .. } | Error::Aliasing { .. } | Error::NonEquidistantGrid => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn sequence(n: usize, coupling: f64, tau: f64, phis: Option<Vec<f64>>, mid_arm_echo: bool) -> PyResult<EchoSequence> {
    let mut seq = EchoSequence::new(n, coupling, tau).map_err(err)?.with_mid_arm_echo(mid_arm_echo);
    if let Some(p) = phis {
        seq = seq.with_phi_grid(p);
    }
    Ok(seq)
}

/// Fourier components `I_m` of the fidelity, `m = -N..=N`.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct MqcSpectrum {
    n_spins: usize,
    orders: Vec<i64>,
    values: Vec<f64>,
}

#[pymethods]
impl MqcSpectrum {
    fn get(&self, m: i64) -> f64 {
        self.orders.iter().position(|&o| o == m).map_or(0.0, |i| self.values[i])
    }

    fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn __repr__(&self) -> String {
        format!("MqcSpectrum(n_spins={}, I_0={:.6})", self.n_spins, self.get(0))
    }
}

impl From<&mqc_echo::MqcSpectrum> for MqcSpectrum {
    fn from(s: &mqc_echo::MqcSpectrum) -> Self {
        let (orders, values) = s.orders().unzip();
        Self {
            n_spins: s.n_spins,
            orders,
            values,
        }
    }
}

/// Fourier amplitudes `A_m` of the magnetization.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct CorrelationSpectrum {
    n_spins: usize,
    orders: Vec<i64>,
    values: Vec<Complex64>,
}

#[pymethods]
impl CorrelationSpectrum {
    fn get(&self, m: i64) -> Complex64 {
        self.orders
            .iter()
            .position(|&o| o == m)
            .map_or(Complex64::new(0.0, 0.0), |i| self.values[i])
    }

    fn __repr__(&self) -> String {
        format!("CorrelationSpectrum(n_spins={})", self.n_spins)
    }
}

impl From<&mqc_echo::CorrelationSpectrum> for CorrelationSpectrum {
    fn from(s: &mqc_echo::CorrelationSpectrum) -> Self {
        let (orders, values) = s.orders().unzip();
        Self {
            n_spins: s.n_spins,
            orders,
            values,
        }
    }
}

#[pyclass(frozen, get_all)]
struct EchoResult {
    phi: Vec<f64>,
    fidelity: Vec<f64>,
    magnetization: Vec<f64>,
}

/// Single-spin rates in s^-1.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct DecoherenceRates {
    gamma_ud: f64,
    gamma_du: f64,
    gamma_el: f64,
    gamma_add: f64,
}

#[pymethods]
impl DecoherenceRates {
    #[new]
    #[pyo3(signature = (gamma_ud, gamma_du, gamma_el, gamma_add = 0.0))]
    fn new(gamma_ud: f64, gamma_du: f64, gamma_el: f64, gamma_add: f64) -> PyResult<Self> {
        lindblad::DecoherenceRates::new(gamma_ud, gamma_du, gamma_el, gamma_add).map_err(err)?;
        Ok(Self {
            gamma_ud,
            gamma_du,
            gamma_el,
            gamma_add,
        })
    }

    /// `Gamma = (Gamma_el + Gamma_add + Gamma_ud + Gamma_du) / 2`.
    fn total(&self) -> f64 {
        self.inner().total()
    }

    fn __repr__(&self) -> String {
        format!(
            "DecoherenceRates(gamma_ud={}, gamma_du={}, gamma_el={}, gamma_add={})",
            self.gamma_ud, self.gamma_du, self.gamma_el, self.gamma_add
        )
    }
}

impl DecoherenceRates {
    fn inner(&self) -> lindblad::DecoherenceRates {
        lindblad::DecoherenceRates::new(self.gamma_ud, self.gamma_du, self.gamma_el, self.gamma_add)
            .expect("checked in the constructor")
    }
}

#[pyclass(frozen, get_all)]
struct DecoherentEcho {
    phi: Vec<f64>,
    fidelity: Vec<f64>,
    magnetization: Vec<f64>,
    purity: f64,
    spectrum: Option<MqcSpectrum>,
    warnings: Vec<String>,
}

#[pyclass(frozen, get_all)]
struct PhononSweep {
    phi: Vec<f64>,
    fidelity: Option<Vec<f64>>,
    fidelity_stderr: Option<Vec<f64>>,
    magnetization: Option<Vec<f64>>,
    magnetization_stderr: Option<Vec<f64>>,
}

/// Photon-count detection settings.
#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct DetectionParams {
    gamma_d: f64,
    gamma_b: f64,
    t_c: f64,
    p_flip: f64,
}

#[pymethods]
impl DetectionParams {
    #[new]
    #[pyo3(signature = (gamma_d = 200.0, gamma_b = 4000.0, t_c = 5e-3, p_flip = 0.03))]
    fn new(gamma_d: f64, gamma_b: f64, t_c: f64, p_flip: f64) -> PyResult<Self> {
        let p = Self {
            gamma_d,
            gamma_b,
            t_c,
            p_flip,
        };
        p.inner().validate().map_err(err)?;
        Ok(p)
    }

    /// Probability of `k` counts in a dark trial.
    fn count_probability(&self, k: u64) -> f64 {
        detect::count_distribution(&self.inner(), k)
    }

    fn threshold(&self) -> PyResult<usize> {
        detect::select_threshold(&self.inner(), 1).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "DetectionParams(gamma_d={}, gamma_b={}, t_c={}, p_flip={})",
            self.gamma_d, self.gamma_b, self.t_c, self.p_flip
        )
    }
}

impl DetectionParams {
    fn inner(&self) -> detect::DetectionParams {
        detect::DetectionParams {
            gamma_d: self.gamma_d,
            gamma_b: self.gamma_b,
            t_c: self.t_c,
            p_flip: self.p_flip,
        }
    }
}

/// Unitary echo fidelity and magnetization on an angle grid (default `4N+4` points).
#[pyfunction]
#[pyo3(signature = (n_spins, coupling, tau, phis = None, mid_arm_echo = false))]
fn echo_sweep(n_spins: usize, coupling: f64, tau: f64, phis: Option<Vec<f64>>, mid_arm_echo: bool) -> PyResult<EchoResult> {
    let r = protocol::run_echo(&sequence(n_spins, coupling, tau, phis, mid_arm_echo)?).map_err(err)?;
    Ok(EchoResult {
        phi: r.phi,
        fidelity: r.fidelity,
        magnetization: r.magnetization,
    })
}

/// `(I_m, A_m)` of the unitary echo at arm time `tau`.
#[pyfunction]
fn spectra(n_spins: usize, coupling: f64, tau: f64) -> PyResult<(MqcSpectrum, CorrelationSpectrum)> {
    let (im, am) = protocol::spectra(&sequence(n_spins, coupling, tau, None, false)?).map_err(err)?;
    Ok(((&im).into(), (&am).into()))
}

#[pyfunction]
fn i0_exact(n_spins: usize, coupling: f64, tau: f64) -> PyResult<f64> {
    protocol::i0_exact(n_spins, coupling, tau).map_err(err)
}

/// `1 / (1 + J^2 tau^2)`.
#[pyfunction]
fn i0_approx(coupling: f64, tau: f64) -> f64 {
    protocol::i0_approx(coupling, tau)
}

#[pyfunction]
fn p_n_distribution(n_spins: usize, coupling: f64, tau: f64) -> PyResult<Vec<f64>> {
    protocol::p_n_distribution(n_spins, coupling, tau).map_err(err)
}

/// `pi N / (4 J)`.
#[pyfunction]
fn cat_time(n_spins: usize, coupling: f64) -> PyResult<f64> {
    protocol::cat_time(n_spins, coupling).map_err(err)
}

/// `Omega_0^2 / (2 delta)`.
#[pyfunction]
fn coupling_from_drive(omega0: f64, delta: f64) -> f64 {
    protocol::coupling_from_drive(omega0, delta)
}

/// Echo under the symmetric-subspace master equation. With `sigma_b > 0`
/// the field is averaged over a Gaussian with that standard deviation.
#[pyfunction]
#[pyo3(signature = (n_spins, coupling, tau, rates, phis = None, field_b = 0.0, sigma_b = 0.0, nodes = 21, mid_arm_echo = false))]
#[allow(clippy::too_many_arguments)]
fn lindblad_echo(
    py: Python<'_>,
    n_spins: usize,
    coupling: f64,
    tau: f64,
    rates: &DecoherenceRates,
    phis: Option<Vec<f64>>,
    field_b: f64,
    sigma_b: f64,
    nodes: usize,
    mid_arm_echo: bool,
) -> PyResult<DecoherentEcho> {
    let seq = sequence(n_spins, coupling, tau, phis, mid_arm_echo)?;
    let rates = rates.inner();
    let field = EffectiveField { b: field_b };
    let r = py
        .detach(|| {
            if sigma_b > 0.0 {
                lindblad::mqc_with_field_noise(&seq, &rates, &field, sigma_b, nodes)
            } else {
                lindblad::mqc_with_decoherence(&seq, &rates, &field)
            }
        })
        .map_err(err)?;
    Ok(DecoherentEcho {
        phi: r.fidelity.iter().map(|p| p.0).collect(),
        fidelity: r.fidelity.iter().map(|p| p.1).collect(),
        magnetization: r.magnetization.iter().map(|p| p.1).collect(),
        purity: r.purity,
        spectrum: r.spectrum.as_ref().map(Into::into),
        warnings: r.warnings,
    })
}

/// Spin-phonon echo averaged over COM-frequency and field noise. `delta`
/// defaults to `2 pi / tau`; `delta_b` is the RMS qubit-frequency width.
#[pyfunction]
#[pyo3(signature = (
    n_spins, omega0, tau, phis, delta = None, omega_z = 2.0 * std::f64::consts::PI * 1.57e6, nbar = 6.0,
    delta_com = 0.0, delta_b = 0.0, samples = 1, quadrature = false, seed = 0, gamma = 0.0, mid_arm_echo = false
))]
#[allow(clippy::too_many_arguments)]
fn phonon_sweep(
    py: Python<'_>,
    n_spins: usize,
    omega0: f64,
    tau: f64,
    phis: Vec<f64>,
    delta: Option<f64>,
    omega_z: f64,
    nbar: f64,
    delta_com: f64,
    delta_b: f64,
    samples: usize,
    quadrature: bool,
    seed: u64,
    gamma: f64,
    mid_arm_echo: bool,
) -> PyResult<PhononSweep> {
    let delta = delta.unwrap_or(2.0 * std::f64::consts::PI / tau);
    let params = phonon::PhononParams::experimental(omega0, omega_z, delta, nbar, tau);
    let noise = phonon::NoiseParams {
        delta_com,
        delta_b,
        sample_count: samples,
        rng_seed: seed,
        mode: if quadrature { NoiseMode::Quadrature } else { NoiseMode::MonteCarlo },
    };
    noise.validate().map_err(err)?;
    let obs = [Observable::Fidelity, Observable::Magnetization];
    let r = py
        .detach(|| {
            phonon::phonon_sweep(n_spins, &params, tau, &phis, &noise, ScatteringDecay { gamma }, mid_arm_echo, &obs)
        })
        .map_err(err)?;
    let split = |v: &Option<Vec<phonon::Averaged>>| {
        v.as_ref().map(|v| (v.iter().map(|a| a.mean).collect(), v.iter().map(|a| a.stderr).collect()))
    };
    let (fidelity, fidelity_stderr) = split(&r.fidelity).unzip();
    let (magnetization, magnetization_stderr) = split(&r.magnetization).unzip();
    Ok(PhononSweep {
        phi: r.phis,
        fidelity,
        fidelity_stderr,
        magnetization,
        magnetization_stderr,
    })
}

/// Photon counts of `trials` repetitions, as a list of bin counts.
#[pyfunction]
#[pyo3(signature = (fidelity, params, trials, seed = 0, n_bright = 1, two_flip = 0.0))]
fn synthesize_histogram(
    fidelity: f64,
    params: &DetectionParams,
    trials: u64,
    seed: u64,
    n_bright: usize,
    two_flip: f64,
) -> PyResult<Vec<u64>> {
    let h = detect::synthesize_histogram(fidelity, &params.inner(), BrightModel { n_bright, two_flip }, trials, seed)
        .map_err(err)?;
    Ok(h.bins().to_vec())
}

/// Maximum-likelihood fidelity and its standard error from histogram bins.
#[pyfunction]
fn fit_fidelity(bins: Vec<u64>, params: &DetectionParams) -> PyResult<(f64, f64)> {
    let est = detect::fit_fidelity(&CountHistogram::from_bins(bins), &params.inner()).map_err(err)?;
    Ok((est.fidelity, est.stderr))
}

/// Fraction of trials at or below `threshold` counts.
#[pyfunction]
fn naive_fidelity(bins: Vec<u64>, threshold: usize) -> f64 {
    detect::naive_fidelity(&CountHistogram::from_bins(bins), threshold)
}

#[pymodule]
#[pyo3(name = "mqc_echo")]
fn mqc_echo_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<MqcSpectrum>()?;
    m.add_class::<CorrelationSpectrum>()?;
    m.add_class::<EchoResult>()?;
    m.add_class::<DecoherenceRates>()?;
    m.add_class::<DecoherentEcho>()?;
    m.add_class::<PhononSweep>()?;
    m.add_class::<DetectionParams>()?;
    m.add_function(wrap_pyfunction!(echo_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(spectra, m)?)?;
    m.add_function(wrap_pyfunction!(i0_exact, m)?)?;
    m.add_function(wrap_pyfunction!(i0_approx, m)?)?;
    m.add_function(wrap_pyfunction!(p_n_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(cat_time, m)?)?;
    m.add_function(wrap_pyfunction!(coupling_from_drive, m)?)?;
    m.add_function(wrap_pyfunction!(lindblad_echo, m)?)?;
    m.add_function(wrap_pyfunction!(phonon_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fidelity, m)?)?;
    m.add_function(wrap_pyfunction!(naive_fidelity, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
