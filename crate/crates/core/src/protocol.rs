//! Many-body echo sequences on pure collective states.
//!
//! The sequence is: prepare `|+...+>`, evolve under `+J` for the arm time,
//! rotate by `R_x(phi)`, evolve under `-J` for the same time, then read out
//! either the overlap with the initial state (fidelity) or `(2/N) <S_x>`
//! (magnetization). Both are trigonometric polynomials in `phi` of degree at
//! most N, so a grid of `2N+2` or more equidistant angles determines their
//! Fourier components exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binom::LogBinomTable;
use crate::collective::{
    apply_real, apply_real_transpose, expectation_sx, half_pi_d, ising_phase_evolve,
    rotate_collective, Axis, Basis, DickeVector, IsingParams,
};
use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// `count` equidistant angles on `[0, 2pi)`.
pub fn uniform_phi_grid(count: usize) -> Vec<f64> {
    (0..count).map(|j| TWO_PI * j as f64 / count as f64).collect()
}

/// Default grid: `4N + 4` points, twice the minimum needed for an exact DFT.
pub fn default_phi_grid(n_spins: usize) -> Vec<f64> {
    uniform_phi_grid(4 * n_spins + 4)
}

/// Smallest grid that resolves all harmonics `|m| <= N`.
pub fn min_phi_samples(n_spins: usize) -> usize {
    2 * n_spins + 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSequence {
    pub n_spins: usize,
    /// Ising coupling in s^-1.
    pub coupling: f64,
    /// Duration of each arm in s.
    pub arm_time: f64,
    pub phi_grid: Vec<f64>,
    /// Extra pi pulse halfway through each arm.
    pub mid_arm_echo: bool,
    /// Axis of the mid-arm pi pulses.
    pub echo_axis: Axis,
    /// Axis of the central rotation.
    pub rotation_axis: Axis,
}

impl EchoSequence {
    pub fn new(n_spins: usize, coupling: f64, arm_time: f64) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !coupling.is_finite() {
            return Err(Error::InvalidParameter("coupling must be finite".into()));
        }
        if !(arm_time >= 0.0) || !arm_time.is_finite() {
            return Err(Error::InvalidParameter(format!("arm time {arm_time} must be >= 0")));
        }
        Ok(Self {
            n_spins,
            coupling,
            arm_time,
            phi_grid: default_phi_grid(n_spins),
            mid_arm_echo: false,
            echo_axis: Axis::X,
            rotation_axis: Axis::X,
        })
    }

    pub fn with_phi_grid(mut self, grid: Vec<f64>) -> Self {
        self.phi_grid = grid;
        self
    }

    pub fn with_mid_arm_echo(mut self, on: bool) -> Self {
        self.mid_arm_echo = on;
        self
    }

    pub fn with_echo_axis(mut self, axis: Axis) -> Self {
        self.echo_axis = axis;
        self
    }

    pub fn ising(&self) -> IsingParams {
        IsingParams {
            coupling: self.coupling,
            n_spins: self.n_spins,
        }
    }

    /// Checks that the grid supports an exact Fourier decomposition.
    pub fn check_spectral_grid(&self) -> Result<()> {
        check_grid(&self.phi_grid, self.n_spins).map(|_| ())
    }

    fn echo(&self) -> Option<Axis> {
        self.mid_arm_echo.then_some(self.echo_axis)
    }
}

/// One evolution arm in the z basis, optionally split by a pi pulse.
pub fn evolve_arm(
    state: &DickeVector,
    ising: &IsingParams,
    duration: f64,
    echo: Option<Axis>,
) -> Result<DickeVector> {
    match echo {
        None => ising_phase_evolve(state, ising, duration),
        Some(axis) => {
            let half = ising_phase_evolve(state, ising, duration / 2.0)?;
            let flipped = rotate_collective(&half, axis, std::f64::consts::PI);
            ising_phase_evolve(&flipped, ising, duration / 2.0)
        }
    }
}

/// State after the forward arm, in the z basis.
pub fn forward_state(seq: &EchoSequence) -> Result<DickeVector> {
    let psi0 = DickeVector::plus_state(seq.n_spins, Basis::Z)?;
    evolve_arm(&psi0, &seq.ising(), seq.arm_time, seq.echo())
}

/// Per-angle fidelity and magnetization of one echo sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoResult {
    pub phi: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub magnetization: Vec<f64>,
}

/// Runs the full sequence for every angle of the grid.
pub fn run_echo(seq: &EchoSequence) -> Result<EchoResult> {
    let n = seq.n_spins;
    let psi0 = DickeVector::plus_state(n, Basis::Z)?;
    let fwd = evolve_arm(&psi0, &seq.ising(), seq.arm_time, seq.echo())?;
    let back = seq.ising().reversed();
    let d = (seq.rotation_axis == Axis::X).then(|| half_pi_d(n));
    let fwd_x = d.as_ref().map(|d| apply_real_transpose(d, fwd.amplitudes()));

    let per_phi = |&phi: &f64| -> Result<(f64, f64)> {
        let rotated = match (&d, &fwd_x) {
            (Some(d), Some(cx)) => rotate_x_cached(d, cx, phi),
            _ => rotate_collective(&fwd, seq.rotation_axis, phi),
        };
        let fin = evolve_arm(&rotated, &back, seq.arm_time, seq.echo())?;
        let ov = crate::collective::overlap(&psi0, &fin)?;
        let f = ov.norm_sqr().clamp(0.0, 1.0);
        let m = (2.0 / n as f64) * expectation_sx(&fin);
        Ok((f, m))
    };
    let rows: Vec<(f64, f64)> = if n >= 32 && seq.phi_grid.len() > 8 {
        seq.phi_grid.par_iter().map(per_phi).collect::<Result<_>>()?
    } else {
        seq.phi_grid.iter().map(per_phi).collect::<Result<_>>()?
    };
    Ok(EchoResult {
        phi: seq.phi_grid.clone(),
        fidelity: rows.iter().map(|r| r.0).collect(),
        magnetization: rows.iter().map(|r| r.1).collect(),
    })
}

/// `R_x(phi)` on a state already expressed in the x basis, returned in z.
fn rotate_x_cached(d: &DMatrix<f64>, cx: &[Complex64], phi: f64) -> DickeVector {
    let n = cx.len() - 1;
    let half_n = n as f64 / 2.0;
    let phased: Vec<Complex64> = cx
        .iter()
        .enumerate()
        .map(|(k, a)| a * Complex64::from_polar(1.0, -phi * (half_n - k as f64)))
        .collect();
    DickeVector::from_parts(apply_real(d, &phased), Basis::Z)
}

/// `(phi, |<psi0|psi_f>|^2)` for every angle of the grid.
pub fn run_fidelity_sweep(seq: &EchoSequence) -> Result<Vec<(f64, f64)>> {
    let r = run_echo(seq)?;
    Ok(r.phi.into_iter().zip(r.fidelity).collect())
}

/// `(phi, (2/N) <S_x>)` for every angle of the grid.
pub fn run_magnetization_sweep(seq: &EchoSequence) -> Result<Vec<(f64, f64)>> {
    let r = run_echo(seq)?;
    Ok(r.phi.into_iter().zip(r.magnetization).collect())
}

/// Validates an equidistant grid covering one period; returns the offset.
fn check_grid(phis: &[f64], n_spins: usize) -> Result<f64> {
    let k = phis.len();
    let required = min_phi_samples(n_spins);
    if k < required {
        return Err(Error::Aliasing {
            samples: k,
            max_order: n_spins,
            required,
        });
    }
    let step = TWO_PI / k as f64;
    for (j, &phi) in phis.iter().enumerate() {
        let expected = phis[0] + step * j as f64;
        if (phi - expected).abs() > 1e-9 * TWO_PI.max(phi.abs()) {
            return Err(Error::NonEquidistantGrid);
        }
    }
    Ok(phis[0])
}

/// Fourier components `c_m = (1/K) sum_j f(phi_j) e^{i m phi_j}` for
/// `m = -N..=N`, so that `f(phi) = sum_m c_m e^{-i m phi}`.
pub fn fourier_components(samples: &[(f64, f64)], n_spins: usize) -> Result<Vec<Complex64>> {
    let phis: Vec<f64> = samples.iter().map(|s| s.0).collect();
    check_grid(&phis, n_spins)?;
    let k = samples.len() as f64;
    let n = n_spins as i64;
    Ok((-n..=n)
        .map(|m| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(phi, f) in samples {
                acc += Complex64::from_polar(f, m as f64 * phi);
            }
            acc / k
        })
        .collect())
}

/// Multiple-quantum-coherence spectrum `I_m` of the fidelity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqcSpectrum {
    pub n_spins: usize,
    /// `I_m` for `m = -N..=N`.
    pub components: Vec<f64>,
    /// Largest imaginary part dropped when forming `components`.
    pub imag_residual: f64,
    pub source_time: f64,
}

impl MqcSpectrum {
    pub fn from_components(n_spins: usize, components: Vec<f64>, source_time: f64) -> Self {
        Self {
            n_spins,
            components,
            imag_residual: 0.0,
            source_time,
        }
    }

    pub fn get(&self, m: i64) -> f64 {
        let idx = m + self.n_spins as i64;
        if idx < 0 || idx as usize >= self.components.len() {
            0.0
        } else {
            self.components[idx as usize]
        }
    }

    pub fn orders(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let n = self.n_spins as i64;
        self.components.iter().enumerate().map(move |(i, &v)| (i as i64 - n, v))
    }

    pub fn total(&self) -> f64 {
        self.components.iter().sum()
    }

    /// Largest `|I_m|` over odd `m`.
    pub fn odd_max(&self) -> f64 {
        self.orders()
            .filter(|(m, _)| m % 2 != 0)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max)
    }
}

/// Fourier amplitudes `A_m` of the magnetization.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpectrum {
    pub n_spins: usize,
    /// `A_m` for `m = -N..=N`.
    pub components: Vec<Complex64>,
    pub source_time: f64,
}

impl CorrelationSpectrum {
    pub fn get(&self, m: i64) -> Complex64 {
        let idx = m + self.n_spins as i64;
        if idx < 0 || idx as usize >= self.components.len() {
            Complex64::new(0.0, 0.0)
        } else {
            self.components[idx as usize]
        }
    }

    pub fn orders(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        let n = self.n_spins as i64;
        self.components.iter().enumerate().map(move |(i, &v)| (i as i64 - n, v))
    }

    pub fn imag_residual(&self) -> f64 {
        self.components.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    /// Real parts; logs a warning when the imaginary parts are not negligible.
    pub fn signed_real(&self) -> Vec<f64> {
        let res = self.imag_residual();
        if res >= 1e-8 {
            log::warn!("correlation spectrum has imaginary residue {res:.3e}; reporting real parts");
        }
        self.components.iter().map(|c| c.re).collect()
    }

    /// Largest `|A_m|` with `|m| > order`.
    pub fn max_beyond(&self, order: i64) -> f64 {
        self.orders()
            .filter(|(m, _)| m.abs() > order)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn odd_max(&self) -> f64 {
        self.orders()
            .filter(|(m, _)| m % 2 != 0)
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }
}

/// `I_m` from fidelity samples.
pub fn mqc_spectrum(samples: &[(f64, f64)], n_spins: usize, source_time: f64) -> Result<MqcSpectrum> {
    let c = fourier_components(samples, n_spins)?;
    let imag_residual = c.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    Ok(MqcSpectrum {
        n_spins,
        components: c.iter().map(|z| z.re).collect(),
        imag_residual,
        source_time,
    })
}

/// `A_m` from magnetization samples.
pub fn correlation_spectrum(
    samples: &[(f64, f64)],
    n_spins: usize,
    source_time: f64,
) -> Result<CorrelationSpectrum> {
    Ok(CorrelationSpectrum {
        n_spins,
        components: fourier_components(samples, n_spins)?,
        source_time,
    })
}

/// Both spectra of one sequence.
pub fn spectra(seq: &EchoSequence) -> Result<(MqcSpectrum, CorrelationSpectrum)> {
    seq.check_spectral_grid()?;
    let r = run_echo(seq)?;
    let f: Vec<(f64, f64)> = r.phi.iter().copied().zip(r.fidelity).collect();
    let m: Vec<(f64, f64)> = r.phi.iter().copied().zip(r.magnetization).collect();
    Ok((
        mqc_spectrum(&f, seq.n_spins, seq.arm_time)?,
        correlation_spectrum(&m, seq.n_spins, seq.arm_time)?,
    ))
}

/// Largest N evaluated with the alternating series in [`p_n_distribution`].
pub const P_N_SERIES_MAX: usize = 64;

/// Probabilities `P_n` of finding exactly `n` spins in `|->` after the
/// forward Ising arm from `|+...+>` (so `P_0 = 1` at `tau = 0`).
///
/// Up to [`P_N_SERIES_MAX`] spins the closed-form double series is summed
/// with log-domain magnitudes and compensated accumulation. The series
/// alternates in sign and cancels roughly `sqrt(C(N, N/2))`-fold, so larger
/// systems use the Dicke-amplitude route, which is exact.
pub fn p_n_distribution(n_spins: usize, coupling: f64, tau: f64) -> Result<Vec<f64>> {
    if n_spins == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if n_spins > P_N_SERIES_MAX {
        return p_n_from_state(n_spins, coupling, tau);
    }
    Ok(p_n_series(n_spins, coupling, tau))
}

/// The series itself, without the size guard.
pub fn p_n_series(n_spins: usize, coupling: f64, tau: f64) -> Vec<f64> {
    let n = n_spins;
    let nf = n as f64;
    let table = LogBinomTable::new(n);
    let ln2 = std::f64::consts::LN_2;
    // C(N,m) C(m,p) C(N-m,n-p) = C(N,n) C(n,p) C(N-n,m-p)
    let theta = |m: usize| {
        let d = m as f64 - nf / 2.0;
        2.0 * coupling / nf * d * d * tau
    };
    (0..=n)
        .map(|k| {
            let ln_pref = 0.5 * table.ln_choose(n, k) - nf * ln2;
            let mut acc = KahanComplex::default();
            for p in 0..=k {
                let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                let ln_cp = table.ln_choose(k, p);
                // inner sum over m = p + q, q = 0..=N-n
                let mut inner = KahanComplex::default();
                for q in 0..=(n - k) {
                    let w = (ln_pref + ln_cp + table.ln_choose(n - k, q)).exp();
                    inner.add(Complex64::from_polar(w, theta(p + q)));
                }
                acc.add(inner.value() * sign);
            }
            acc.value().norm_sqr()
        })
        .collect()
}

/// `P_n = |<n_x| psi(tau)>|^2` from the evolved Dicke amplitudes.
pub fn p_n_from_state(n_spins: usize, coupling: f64, tau: f64) -> Result<Vec<f64>> {
    let seq = EchoSequence::new(n_spins, coupling, tau)?;
    Ok(forward_state(&seq)?.to_basis(Basis::X).populations())
}

/// `I_0 = sum_n P_n^2`.
pub fn i0_exact(n_spins: usize, coupling: f64, tau: f64) -> Result<f64> {
    Ok(p_n_distribution(n_spins, coupling, tau)?.iter().map(|p| p * p).sum())
}

/// `I_m = sum_n P_n P_{n+m}` for pure states.
pub fn mqc_from_p_n(p: &[f64]) -> Vec<f64> {
    let n = p.len() as i64 - 1;
    (-n..=n)
        .map(|m| {
            (0..=n)
                .filter(|&i| i + m >= 0 && i + m <= n)
                .map(|i| p[i as usize] * p[(i + m) as usize])
                .sum()
        })
        .collect()
}

/// Normal-approximation estimate `I_0 ~ 1 / (1 + J^2 tau^2)`.
pub fn i0_approx(coupling: f64, tau: f64) -> f64 {
    let x = coupling * tau;
    1.0 / (1.0 + x * x)
}

/// Time `pi N / (4 J)` at which the forward arm forms a cat state along x.
pub fn cat_time(n_spins: usize, coupling: f64) -> Result<f64> {
    if coupling == 0.0 || !coupling.is_finite() {
        return Err(Error::InvalidParameter("cat time needs a finite non-zero coupling".into()));
    }
    Ok(std::f64::consts::PI * n_spins as f64 / (4.0 * coupling.abs()))
}

/// Ising coupling `J = Omega_0^2 / (2 delta)` of the light-shift drive.
pub fn coupling_from_drive(omega0: f64, delta: f64) -> f64 {
    omega0 * omega0 / (2.0 * delta)
}

#[derive(Debug, Default, Clone, Copy)]
struct KahanComplex {
    sum: Complex64,
    comp: Complex64,
}

impl KahanComplex {
    fn add(&mut self, x: Complex64) {
        self.sum.re = neumaier(self.sum.re, x.re, &mut self.comp.re);
        self.sum.im = neumaier(self.sum.im, x.im, &mut self.comp.im);
    }

    fn value(&self) -> Complex64 {
        self.sum + self.comp
    }
}

fn neumaier(sum: f64, x: f64, comp: &mut f64) -> f64 {
    let t = sum + x;
    if sum.abs() >= x.abs() {
        *comp += (sum - t) + x;
    } else {
        *comp += (x - t) + sum;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_signal() {
        let grid = uniform_phi_grid(10);
        let s: Vec<(f64, f64)> = grid.iter().map(|&p| (p, 1.0)).collect();
        let c = mqc_spectrum(&s, 4, 0.0).unwrap();
        assert!((c.get(0) - 1.0).abs() < 1e-14);
        assert!(c.orders().filter(|(m, _)| *m != 0).all(|(_, v)| v.abs() < 1e-14));
    }

    #[test]
    fn cosine_signal_with_offset() {
        let grid: Vec<f64> = uniform_phi_grid(12).iter().map(|p| p + 0.1).collect();
        let s: Vec<(f64, f64)> = grid.iter().map(|&p| (p, (2.0 * p).cos())).collect();
        let c = mqc_spectrum(&s, 4, 0.0).unwrap();
        assert!((c.get(2) - 0.5).abs() < 1e-14);
        assert!((c.get(-2) - 0.5).abs() < 1e-14);
        assert!(c.get(0).abs() < 1e-14);
    }

    #[test]
    fn grid_errors() {
        let s: Vec<(f64, f64)> = uniform_phi_grid(9).iter().map(|&p| (p, 1.0)).collect();
        assert!(matches!(mqc_spectrum(&s, 4, 0.0), Err(Error::Aliasing { .. })));
        let mut s: Vec<(f64, f64)> = uniform_phi_grid(12).iter().map(|&p| (p, 1.0)).collect();
        s[3].0 += 0.01;
        assert!(matches!(mqc_spectrum(&s, 4, 0.0), Err(Error::NonEquidistantGrid)));
    }

    #[test]
    fn zero_time_is_perfect() {
        let seq = EchoSequence::new(7, 3.0, 0.0).unwrap();
        let r = run_echo(&seq).unwrap();
        assert!(r.fidelity.iter().all(|f| (f - 1.0).abs() < 1e-12));
        assert!(r.magnetization.iter().all(|m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn perfect_echo_at_zero_angle() {
        for echo in [false, true] {
            let seq = EchoSequence::new(20, 1.0, 0.37)
                .unwrap()
                .with_mid_arm_echo(echo)
                .with_phi_grid(vec![0.0]);
            let r = run_echo(&seq).unwrap();
            assert!((r.fidelity[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cat_spectrum() {
        let n = 6;
        let j = 1.0;
        let seq = EchoSequence::new(n, j, cat_time(n, j).unwrap()).unwrap();
        let (mqc, _) = spectra(&seq).unwrap();
        assert!((mqc.get(0) - 0.5).abs() < 1e-10);
        assert!((mqc.get(6) - 0.25).abs() < 1e-10);
        assert!((mqc.get(-6) - 0.25).abs() < 1e-10);
        for m in -5..=5 {
            if m != 0 {
                assert!(mqc.get(m).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn p_n_point_mass_at_zero_time() {
        let p = p_n_distribution(10, 2.0, 0.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn p_n_series_matches_amplitudes() {
        for (n, jt) in [(6, 0.5), (13, 0.8), (48, 0.2)] {
            let a = p_n_series(n, jt, 1.0);
            let b = p_n_from_state(n, jt, 1.0).unwrap();
            let s: f64 = a.iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "n={n}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn experimental_drive_numbers() {
        let j = coupling_from_drive(7850.0, 4.0 * std::f64::consts::PI / 1e-3);
        assert!((j - 2451.7).abs() / 2451.7 < 1e-3);
        let frac = 1e-3 / cat_time(48, j).unwrap();
        assert!((frac - 0.065).abs() / 0.065 < 3e-3);
        assert!(cat_time(4, 0.0).is_err());
        assert!((i0_approx(2.0, 0.5) - 0.5).abs() < 1e-15);
    }
}
