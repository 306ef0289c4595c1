//! Spin-phonon propagator of the optical-dipole-force drive and thermal
//! averages of echo observables.
//!
//! During one arm the interaction-picture Hamiltonian
//! `H = -(Omega_0/sqrt N) cos(mu t + phi) (a e^{-i w t} + a^dag e^{i w t}) sum_j sigma_z^j`
//! generates, exactly, a spin-dependent displacement `D(alpha S)` times an
//! Ising phase `exp(-i J sum_{i<j} sigma_z^i sigma_z^j)` (`S = sum sigma_z`).
//! Both are evaluated from closed-form phase integrals. A full echo then maps
//! the z eigenstate `|s>` to `|+-s>` with a displacement `D(X s)` and a phase
//! polynomial in `s`; thermal traces follow from the Gaussian characteristic
//! function `<D(xi)> = exp(-(nbar + 1/2)|xi|^2)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binom::LogBinomTable;
use crate::collective::ladder_element;
use crate::error::{Error, Result};
use crate::quadrature::gauss_hermite_normal;
use crate::wigner::{wigner_d, RotationConvention};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// `sin(x) / x`.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `int_0^T e^{i c x} dx`, stable for small `c T`.
pub fn phase_integral(c: f64, t: f64) -> Complex64 {
    let h = 0.5 * c * t;
    // (e^{icT} - 1)/(ic) = T sinc(cT/2) e^{icT/2}
    Complex64::from_polar(t * sinc(h), h)
}

/// `int_0^T dx int_0^x dy e^{i a x + i b y}`.
pub fn double_phase_integral(a: f64, b: f64, t: f64) -> Complex64 {
    let small = 0.5;
    let (at, bt) = (a * t, b * t);
    if at.abs() <= small && bt.abs() <= small {
        // sum_{p,q} (iaT)^p (ibT)^q / (p! q! (q+1)(p+q+2)) T^2
        let mut acc = ZERO;
        let ia = I * at;
        let ib = I * bt;
        let mut pa = Complex64::new(1.0, 0.0);
        for p in 0..24usize {
            if p > 0 {
                pa *= ia / p as f64;
            }
            let mut pb = Complex64::new(1.0, 0.0);
            for q in 0..(24 - p) {
                if q > 0 {
                    pb *= ib / q as f64;
                }
                acc += pa * pb / (((q + 1) * (p + q + 2)) as f64);
            }
        }
        acc * (t * t)
    } else if b.abs() >= a.abs() {
        (phase_integral(a + b, t) - phase_integral(a, t)) / (I * b)
    } else {
        // swap the order of integration
        phase_integral(a, t) * phase_integral(b, t)
            - (phase_integral(a + b, t) - phase_integral(b, t)) / (I * a)
    }
}

/// Drive settings of one arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub omega0: f64,
    pub n_spins: usize,
    /// Actual COM frequency.
    pub omega_com: f64,
    /// Beat-note frequency `mu_r`.
    pub mu: f64,
    /// ODF phase.
    pub phi: f64,
}

impl Drive {
    /// Displacement amplitude `alpha(t, t0) = i (Omega_0/sqrt N) int e^{i w s} cos(mu s + phi) ds`.
    pub fn alpha(&self, t: f64, t0: f64) -> Complex64 {
        let pref = I * (self.omega0 / (2.0 * (self.n_spins as f64).sqrt()));
        let plus = self.omega_com + self.mu;
        let minus = self.omega_com - self.mu;
        let span = t - t0;
        let a = Complex64::from_polar(1.0, self.phi + plus * t0) * phase_integral(plus, span);
        let b = Complex64::from_polar(1.0, -self.phi + minus * t0) * phase_integral(minus, span);
        pref * (a + b)
    }

    /// Coefficient of `sum_{i<j} sigma_z^i sigma_z^j` in the arm propagator.
    pub fn coupling(&self, t: f64, t0: f64) -> f64 {
        let span = t - t0;
        let (mu, w) = (self.mu, self.omega_com);
        let mut acc = ZERO;
        for s1 in [-1.0, 1.0] {
            for s2 in [-1.0, 1.0] {
                for s3 in [-1.0, 1.0] {
                    let a = s1 * mu + s3 * w;
                    let b = s2 * mu - s3 * w;
                    // (1/4) * s3 / (2i)
                    let coef = Complex64::new(0.0, -s3 / 8.0);
                    let phase = Complex64::from_polar(1.0, (s1 + s2) * self.phi + (a + b) * t0);
                    acc += coef * phase * double_phase_integral(a, b, span);
                }
            }
        }
        -2.0 * self.omega0 * self.omega0 / self.n_spins as f64 * acc.re
    }
}

/// Drive and mode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononParams {
    /// Drive strength `Omega_0` (s^-1).
    pub omega0: f64,
    /// COM mode frequency (s^-1).
    pub omega_z: f64,
    /// ODF detuning (s^-1); the beat note is `omega_z + delta` in the first arm.
    pub delta: f64,
    /// ODF phase of the first arm.
    pub phi1: f64,
    /// ODF phase of the second arm.
    pub phi2: f64,
    /// Mean thermal occupation of the COM mode.
    pub nbar: f64,
    /// Duration of a pi pulse (s).
    pub t_pi: f64,
}

/// Default pi-pulse duration, 75 us.
pub const DEFAULT_T_PI: f64 = 75e-6;

impl PhononParams {
    /// Parameters with the experimental phase relation
    /// `phi2 - phi1 = 2 pi t_pi / tau`.
    pub fn experimental(omega0: f64, omega_z: f64, delta: f64, nbar: f64, tau: f64) -> Self {
        Self {
            omega0,
            omega_z,
            delta,
            phi1: 0.0,
            phi2: TWO_PI * DEFAULT_T_PI / tau,
            nbar,
            t_pi: DEFAULT_T_PI,
        }
        .with_phase_relation(tau)
    }

    /// Re-applies `phi2 = phi1 + 2 pi t_pi / tau`.
    pub fn with_phase_relation(mut self, tau: f64) -> Self {
        self.phi2 = self.phi1 + TWO_PI * self.t_pi / tau;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_z > 0.0) {
            return Err(Error::InvalidParameter("omega_z must be positive".into()));
        }
        if !(self.nbar >= 0.0) {
            return Err(Error::InvalidParameter("nbar must be >= 0".into()));
        }
        if !self.omega0.is_finite() || !self.delta.is_finite() {
            return Err(Error::InvalidParameter("drive parameters must be finite".into()));
        }
        Ok(())
    }

    /// Uniform Ising coupling `Omega_0^2 / (2 delta)`.
    pub fn coupling(&self) -> f64 {
        self.omega0 * self.omega0 / (2.0 * self.delta)
    }

    /// Drive of the first arm for a COM shift `d_omega`.
    pub fn forward_drive(&self, n_spins: usize, d_omega: f64) -> Drive {
        Drive {
            omega0: self.omega0,
            n_spins,
            omega_com: self.omega_z + d_omega,
            mu: self.omega_z + self.delta,
            phi: self.phi1,
        }
    }

    /// Drive of the second arm (detuning reversed).
    pub fn reverse_drive(&self, n_spins: usize, d_omega: f64) -> Drive {
        Drive {
            omega0: self.omega0,
            n_spins,
            omega_com: self.omega_z + d_omega,
            mu: self.omega_z - self.delta,
            phi: self.phi2,
        }
    }
}

/// `nbar = 1 / (e^{beta omega} - 1)`.
pub fn nbar_from_beta(beta: f64, omega: f64) -> f64 {
    1.0 / (beta * omega).exp_m1()
}

/// Inverse of [`nbar_from_beta`].
pub fn beta_from_nbar(nbar: f64, omega: f64) -> f64 {
    (1.0 + 1.0 / nbar).ln() / omega
}

/// `alpha(t, t0)` of the first-arm drive.
pub fn alpha_full(p: &PhononParams, n_spins: usize, t: f64, t0: f64) -> Complex64 {
    p.forward_drive(n_spins, 0.0).alpha(t, t0)
}

/// `J(t, t0)` of the first-arm drive.
pub fn j_full(p: &PhononParams, n_spins: usize, t: f64, t0: f64) -> f64 {
    p.forward_drive(n_spins, 0.0).coupling(t, t0)
}

/// Rotating-wave displacement `-(Omega_0/(2 delta sqrt N)) e^{-i phi} (e^{-i delta t} - e^{-i delta t0})`.
pub fn alpha_rwa(p: &PhononParams, n_spins: usize, t: f64, t0: f64) -> Complex64 {
    let pref = -p.omega0 / (2.0 * p.delta * (n_spins as f64).sqrt());
    let diff = Complex64::from_polar(1.0, -p.delta * t) - Complex64::from_polar(1.0, -p.delta * t0);
    Complex64::from_polar(pref, -p.phi1) * diff
}

/// Secular coupling `Omega_0^2 (t - t0) / (2 N delta)`.
pub fn j_rwa(p: &PhononParams, n_spins: usize, t: f64, t0: f64) -> f64 {
    p.omega0 * p.omega0 / (2.0 * n_spins as f64 * p.delta) * (t - t0)
}

/// Spin-dependent displacements of the two arms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementPair {
    pub alpha: Complex64,
    pub beta: Complex64,
}

/// One realization of the classical noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSample {
    /// COM frequency shift (s^-1).
    pub delta_omega_z: f64,
    /// Field term `B sum sigma_z` (s^-1).
    pub b: f64,
}

/// An arm reduced to its action on `|s>`, `s = 2 S_z`:
/// `|s> -> e^{i (quad s^2 + lin s)} D(x s) |sigma s>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompiledArm {
    pub x: Complex64,
    pub quad: f64,
    pub lin: f64,
    pub flipped: bool,
}

impl CompiledArm {
    fn identity() -> Self {
        Self {
            x: ZERO,
            quad: 0.0,
            lin: 0.0,
            flipped: false,
        }
    }

    /// Appends a driven segment with displacement `alpha`, coupling `j`,
    /// field `b` and duration `dt`.
    fn push_segment(&mut self, alpha: Complex64, j: f64, b: f64, dt: f64) {
        let sigma = if self.flipped { -1.0 } else { 1.0 };
        // D(sigma alpha s) D(x s) = e^{i s^2 sigma Im(alpha conj(x))} D((sigma alpha + x) s)
        self.quad += sigma * (alpha * self.x.conj()).im;
        self.x += alpha * sigma;
        self.quad -= 0.5 * j;
        self.lin -= b * dt * sigma;
    }

    /// Instantaneous pi pulse about x.
    fn push_flip(&mut self) {
        self.flipped = !self.flipped;
    }

    fn phase(&self, s: f64) -> f64 {
        self.quad * s * s + self.lin * s
    }
}

/// Both arms of an echo sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EchoArms {
    pub n_spins: usize,
    pub first: CompiledArm,
    pub second: CompiledArm,
}

impl EchoArms {
    /// Arms built from given displacements and couplings, without mid-arm pulses.
    pub fn from_parts(
        n_spins: usize,
        pair: DisplacementPair,
        j: f64,
        j_tilde: f64,
        b: f64,
        tau: f64,
    ) -> Self {
        let mut first = CompiledArm::identity();
        first.push_segment(pair.alpha, j, b, tau);
        let mut second = CompiledArm::identity();
        second.push_segment(pair.beta, j_tilde, b, tau);
        Self {
            n_spins,
            first,
            second,
        }
    }

    /// Arms of the experimental sequence: first arm on `[0, tau]` at
    /// detuning `+delta`, second on `[tau, 2 tau]` at `-delta`, both seen by
    /// a COM mode shifted by the noise sample.
    pub fn protocol(
        n_spins: usize,
        p: &PhononParams,
        tau: f64,
        sample: NoiseSample,
        mid_arm_echo: bool,
    ) -> Self {
        let fwd = p.forward_drive(n_spins, sample.delta_omega_z);
        let rev = p.reverse_drive(n_spins, sample.delta_omega_z);
        let build = |drive: &Drive, t0: f64| {
            let mut arm = CompiledArm::identity();
            let cuts: Vec<f64> = if mid_arm_echo {
                vec![t0, t0 + tau / 2.0, t0 + tau]
            } else {
                vec![t0, t0 + tau]
            };
            for (i, w) in cuts.windows(2).enumerate() {
                if i > 0 {
                    arm.push_flip();
                }
                arm.push_segment(drive.alpha(w[1], w[0]), drive.coupling(w[1], w[0]), sample.b, w[1] - w[0]);
            }
            arm
        };
        Self {
            n_spins,
            first: build(&fwd, 0.0),
            second: build(&rev, tau),
        }
    }

    pub fn displacements(&self) -> DisplacementPair {
        DisplacementPair {
            alpha: self.first.x,
            beta: self.second.x,
        }
    }
}

/// Rotation matrices and initial amplitudes reused across noise samples.
#[derive(Debug, Clone)]
pub struct PhononKernel {
    n_spins: usize,
    phis: Vec<f64>,
    rotations: Vec<DMatrix<Complex64>>,
    /// Amplitudes of `|+...+>` over z Dicke states.
    c: Vec<f64>,
}

/// Which observable to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    Fidelity,
    Magnetization,
}

impl PhononKernel {
    pub fn new(n_spins: usize, phis: &[f64]) -> Result<Self> {
        if n_spins == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        let rotations = phis
            .iter()
            .map(|&phi| wigner_d(n_spins, phi, RotationConvention::Zxz).map(|d| d.entries().clone()))
            .collect::<Result<Vec<_>>>()?;
        let table = LogBinomTable::new(n_spins);
        let c = (0..=n_spins)
            .map(|k| (0.5 * table.ln_choose(n_spins, k) - 0.5 * n_spins as f64 * std::f64::consts::LN_2).exp())
            .collect();
        Ok(Self {
            n_spins,
            phis: phis.to_vec(),
            rotations,
            c,
        })
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    fn s_of(&self, k: usize) -> f64 {
        self.n_spins as f64 - 2.0 * k as f64
    }

    fn flip_index(&self, k: usize, flipped: bool) -> usize {
        if flipped {
            self.n_spins - k
        } else {
            k
        }
    }

    /// Amplitude matrix `[k][k']` for initial `s` (row) and post-rotation `s'` (column),
    /// without the final projection.
    fn amplitudes(&self, arms: &EchoArms, rot: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = self.n_spins;
        let row: Vec<Complex64> = (0..=n)
            .map(|k| Complex64::from_polar(self.c[k], arms.first.phase(self.s_of(k))))
            .collect();
        let col: Vec<Complex64> = (0..=n)
            .map(|kp| Complex64::from_polar(1.0, arms.second.phase(self.s_of(kp))))
            .collect();
        DMatrix::from_fn(n + 1, n + 1, |k, kp| {
            rot[(kp, self.flip_index(k, arms.first.flipped))] * row[k] * col[kp]
        })
    }

    fn negligible_displacement(&self, arms: &EchoArms, nbar: f64) -> bool {
        let scale = (nbar + 0.5) * (2.0 * self.n_spins as f64).powi(2);
        scale * (arms.first.x.norm_sqr() + arms.second.x.norm_sqr()) < 1e-16
    }

    /// Thermally averaged echo fidelity for every angle.
    pub fn fidelity(&self, arms: &EchoArms, nbar: f64) -> Vec<f64> {
        self.rotations
            .iter()
            .map(|rot| self.fidelity_one(arms, rot, nbar))
            .collect()
    }

    /// Thermally averaged `<S_x>` after the sequence for every angle.
    pub fn sx(&self, arms: &EchoArms, nbar: f64) -> Vec<f64> {
        self.rotations
            .iter()
            .map(|rot| self.sx_one(arms, rot, nbar))
            .collect()
    }

    pub fn evaluate(&self, arms: &EchoArms, nbar: f64, obs: Observable) -> Vec<f64> {
        match obs {
            Observable::Fidelity => self.fidelity(arms, nbar),
            Observable::Magnetization => self.sx(arms, nbar),
        }
    }

    /// `exp(-(nbar + 1/2) |x1 (s1 - s2) + x2 v|^2)` indexed by `k2 - k1 + n`.
    fn gauss_table(&self, x1: Complex64, x2: Complex64, v: f64, width: f64) -> Vec<f64> {
        let n = self.n_spins as i64;
        (-n..=n)
            .map(|d| (-width * (x1 * (2.0 * d as f64) + x2 * v).norm_sqr()).exp())
            .collect()
    }

    fn fidelity_one(&self, arms: &EchoArms, rot: &DMatrix<Complex64>, nbar: f64) -> f64 {
        let n = self.n_spins;
        let mut g = self.amplitudes(arms, rot);
        // project onto the initial state after the final (possibly flipped) arm
        for kp in 0..=n {
            let w = self.c[self.flip_index(kp, arms.second.flipped)];
            for k in 0..=n {
                g[(k, kp)] *= w;
            }
        }
        if self.negligible_displacement(arms, nbar) {
            return g.iter().sum::<Complex64>().norm_sqr();
        }
        let x1 = arms.first.x;
        let x2 = arms.second.x;
        let kappa = (x1 * x2.conj()).im;
        let width = nbar + 0.5;
        let dim = n + 1;
        let gr = g.map(|z| z.re);
        let gi = g.map(|z| z.im);
        let mut total = 0.0;
        for dk in -(n as i64)..=(n as i64) {
            // s1' - s2' = 2 (k2' - k1') = 2 dk
            let v = 2.0 * dk as f64;
            let gauss = self.gauss_table(x1, x2, v, width);
            if gauss.iter().all(|&w| w < 1e-35) {
                continue;
            }
            let len = dim - dk.unsigned_abs() as usize;
            let (a0, b0) = if dk >= 0 { (0, dk as usize) } else { ((-dk) as usize, 0) };
            let (ar, ai) = (gr.columns(a0, len), gi.columns(a0, len));
            let (br, bi) = (gr.columns(b0, len), gi.columns(b0, len));
            let hr = ar * br.transpose() + ai * bi.transpose();
            let hi = ai * br.transpose() - ar * bi.transpose();
            let ph: Vec<Complex64> = (0..dim)
                .map(|k| Complex64::from_polar(1.0, -kappa * self.s_of(k) * v))
                .collect();
            for k1 in 0..dim {
                let mut row = ZERO;
                for k2 in 0..dim {
                    let w = gauss[k2 + n - k1];
                    row += Complex64::new(hr[(k1, k2)], hi[(k1, k2)]) * (ph[k2] * w);
                }
                total += (row * ph[k1]).re;
            }
        }
        total
    }

    fn sx_one(&self, arms: &EchoArms, rot: &DMatrix<Complex64>, nbar: f64) -> f64 {
        let n = self.n_spins;
        let g = self.amplitudes(arms, rot);
        let sx_elem = |k: usize| 0.5 * ladder_element(n, k); // <k-1|S_x|k>
        if self.negligible_displacement(arms, nbar) {
            // final spin amplitudes over s' (the flip leaves S_x invariant)
            let psi: Vec<Complex64> = (0..=n).map(|kp| (0..=n).map(|k| g[(k, kp)]).sum()).collect();
            let mut acc = 0.0;
            for k in 1..=n {
                acc += 2.0 * sx_elem(k) * (psi[k - 1].conj() * psi[k]).re;
            }
            return acc;
        }
        let x1 = arms.first.x;
        let x2 = arms.second.x;
        let kappa = (x1 * x2.conj()).im;
        let width = nbar + 0.5;
        let dim = n + 1;
        let mut total = 0.0;
        for v in [-2.0f64, 2.0] {
            // s2' = s1' + v  <=>  k2' = k1' - v/2
            let dk: i64 = if v > 0.0 { -1 } else { 1 };
            let ph: Vec<Complex64> = (0..dim)
                .map(|k| Complex64::from_polar(1.0, kappa * self.s_of(k) * v))
                .collect();
            // a[k', k] = g[k, k'] e^{i kappa s v}
            let a = DMatrix::from_fn(dim, dim, |kp, k| g[(k, kp)] * ph[k]);
            let ar = a.map(|z| z.re);
            let ai = a.map(|z| z.im);
            let gauss = self.gauss_table(-x1, x2, v, width);
            let kmat = DMatrix::from_fn(dim, dim, |k1, k2| gauss[k2 + n - k1]);
            let tr = ar * &kmat;
            let ti = ai * &kmat;
            for k1p in 0..dim {
                let k2p = k1p as i64 + dk;
                if k2p < 0 || k2p > n as i64 {
                    continue;
                }
                let k2p = k2p as usize;
                let elem = sx_elem(k1p.max(k2p));
                let mut row = ZERO;
                for k2 in 0..dim {
                    let bc = g[(k2, k2p)].conj() * ph[k2];
                    row += Complex64::new(tr[(k1p, k2)], ti[(k1p, k2)]) * bc;
                }
                total += row.re * elem;
            }
        }
        total
    }
}

/// Single-kernel evaluations, matching the signature `(N, params, sample, J, J~, phi, tau)`.
#[allow(clippy::too_many_arguments)]
pub fn thermal_fidelity(
    n_spins: usize,
    pair: DisplacementPair,
    nbar: f64,
    b: f64,
    j: f64,
    j_tilde: f64,
    phi: f64,
    tau: f64,
) -> Result<f64> {
    let arms = EchoArms::from_parts(n_spins, pair, j, j_tilde, b, tau);
    Ok(PhononKernel::new(n_spins, &[phi])?.fidelity(&arms, nbar)[0])
}

/// `<S_x>` counterpart of [`thermal_fidelity`].
#[allow(clippy::too_many_arguments)]
pub fn thermal_sx(
    n_spins: usize,
    pair: DisplacementPair,
    nbar: f64,
    b: f64,
    j: f64,
    j_tilde: f64,
    phi: f64,
    tau: f64,
) -> Result<f64> {
    let arms = EchoArms::from_parts(n_spins, pair, j, j_tilde, b, tau);
    Ok(PhononKernel::new(n_spins, &[phi])?.sx(&arms, nbar)[0])
}

/// How classical noise is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    MonteCarlo,
    /// Tensor Gauss-Hermite rule with `sample_count` nodes per noisy variable.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// RMS COM-frequency fluctuation (s^-1).
    pub delta_com: f64,
    /// RMS qubit-frequency fluctuation (s^-1). The qubit splitting is `2B`, so
    /// `B` itself has width `delta_b / 2`.
    pub delta_b: f64,
    pub sample_count: usize,
    pub rng_seed: u64,
    pub mode: NoiseMode,
}

impl NoiseParams {
    pub fn none() -> Self {
        Self {
            delta_com: 0.0,
            delta_b: 0.0,
            sample_count: 1,
            rng_seed: 0,
            mode: NoiseMode::MonteCarlo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_com >= 0.0) || !(self.delta_b >= 0.0) {
            return Err(Error::InvalidParameter("noise widths must be >= 0".into()));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
        }
        if self.mode == NoiseMode::Quadrature && self.sample_count > 64 {
            return Err(Error::InvalidParameter("quadrature supports at most 64 nodes".into()));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.delta_com == 0.0 && self.delta_b == 0.0
    }

    /// Standard deviation of the field coefficient `B`.
    pub fn sigma_b(&self) -> f64 {
        0.5 * self.delta_b
    }

    /// Weighted noise samples. Monte Carlo draws use one ChaCha stream per
    /// sample, so results do not depend on evaluation order.
    pub fn samples(&self) -> Result<Vec<(f64, NoiseSample)>> {
        self.validate()?;
        if self.is_noiseless() {
            return Ok(vec![(1.0, NoiseSample::default())]);
        }
        match self.mode {
            NoiseMode::MonteCarlo => {
                let w = 1.0 / self.sample_count as f64;
                Ok((0..self.sample_count)
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
                        rng.set_stream(i as u64);
                        let z1: f64 = StandardNormal.sample(&mut rng);
                        let z2: f64 = StandardNormal.sample(&mut rng);
                        (
                            w,
                            NoiseSample {
                                delta_omega_z: self.delta_com * z1,
                                b: self.sigma_b() * z2,
                            },
                        )
                    })
                    .collect())
            }
            NoiseMode::Quadrature => {
                let rule = gauss_hermite_normal(self.sample_count);
                let axis = |width: f64| -> Vec<(f64, f64)> {
                    if width == 0.0 {
                        vec![(1.0, 0.0)]
                    } else {
                        rule.weights.iter().zip(&rule.nodes).map(|(w, x)| (*w, width * x)).collect()
                    }
                };
                let mut out = Vec::new();
                for (wc, dc) in axis(self.delta_com) {
                    for (wb, db) in axis(self.sigma_b()) {
                        out.push((
                            wc * wb,
                            NoiseSample {
                                delta_omega_z: dc,
                                b: db,
                            },
                        ));
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Mean and standard error of a noise-averaged quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub mean: f64,
    pub stderr: f64,
}

/// Averages a scalar kernel over the noise distribution.
pub fn noise_average<F>(noise: &NoiseParams, kernel: F) -> Result<Averaged>
where
    F: Fn(NoiseSample) -> Result<f64> + Sync,
{
    let v = noise_average_vec(noise, |s| kernel(s).map(|x| vec![x]))?;
    Ok(v[0])
}

/// Averages a vector-valued kernel (for example one value per angle).
pub fn noise_average_vec<F>(noise: &NoiseParams, kernel: F) -> Result<Vec<Averaged>>
where
    F: Fn(NoiseSample) -> Result<Vec<f64>> + Sync,
{
    let samples = noise.samples()?;
    let values: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|(_, s)| kernel(*s))
        .collect::<Result<_>>()?;
    let len = values.first().map_or(0, |v| v.len());
    let mc = noise.mode == NoiseMode::MonteCarlo && samples.len() > 1;
    Ok((0..len)
        .map(|i| {
            let mean: f64 = samples.iter().zip(&values).map(|((w, _), v)| w * v[i]).sum();
            let stderr = if mc {
                let m = samples.len() as f64;
                let var = values.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (m - 1.0);
                (var / m).sqrt()
            } else {
                0.0
            };
            Averaged { mean, stderr }
        })
        .collect())
}

/// Decay applied to phonon-model curves from light scattering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringDecay {
    /// Total single-spin rate (s^-1).
    pub gamma: f64,
}

impl ScatteringDecay {
    /// `e^{-N Gamma tau}` for the fidelity.
    pub fn fidelity_factor(&self, n_spins: usize, tau: f64) -> f64 {
        (-(n_spins as f64) * self.gamma * tau).exp()
    }

    /// `e^{-Gamma tau}` for the magnetization.
    pub fn magnetization_factor(&self, tau: f64) -> f64 {
        (-self.gamma * tau).exp()
    }
}

/// Result of a noise-averaged phonon-model sweep at one arm time.
#[derive(Debug, Clone)]
pub struct PhononSweep {
    pub tau: f64,
    pub phis: Vec<f64>,
    /// Fidelity including the scattering factor.
    pub fidelity: Option<Vec<Averaged>>,
    /// `(2/N) <S_x>` including the scattering factor.
    pub magnetization: Option<Vec<Averaged>>,
}

/// Evaluates the requested observables for every angle, averaged over noise.
#[allow(clippy::too_many_arguments)]
pub fn phonon_sweep(
    n_spins: usize,
    params: &PhononParams,
    tau: f64,
    phis: &[f64],
    noise: &NoiseParams,
    decay: ScatteringDecay,
    mid_arm_echo: bool,
    observables: &[Observable],
) -> Result<PhononSweep> {
    params.validate()?;
    let kernel = PhononKernel::new(n_spins, phis)?;
    let want_f = observables.contains(&Observable::Fidelity);
    let want_m = observables.contains(&Observable::Magnetization);
    let k = phis.len();
    let averaged = noise_average_vec(noise, |sample| {
        let arms = EchoArms::protocol(n_spins, params, tau, sample, mid_arm_echo);
        let mut out = Vec::with_capacity(2 * k);
        if want_f {
            out.extend(kernel.fidelity(&arms, params.nbar));
        }
        if want_m {
            out.extend(kernel.sx(&arms, params.nbar).into_iter().map(|v| 2.0 * v / n_spins as f64));
        }
        Ok(out)
    })?;
    let scale = |v: &[Averaged], f: f64| -> Vec<Averaged> {
        v.iter()
            .map(|a| Averaged {
                mean: a.mean * f,
                stderr: a.stderr * f,
            })
            .collect()
    };
    let ff = decay.fidelity_factor(n_spins, tau);
    let fm = decay.magnetization_factor(tau);
    let fidelity = want_f.then(|| scale(&averaged[..k], ff));
    let magnetization = want_m.then(|| {
        let start = if want_f { k } else { 0 };
        scale(&averaged[start..start + k], fm)
    });
    Ok(PhononSweep {
        tau,
        phis: phis.to_vec(),
        fidelity,
        magnetization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, integrate_complex};

    #[test]
    fn phase_integral_limits() {
        assert!((phase_integral(0.0, 2.0) - Complex64::new(2.0, 0.0)).norm() < 1e-15);
        let c = 3.0;
        let want = (Complex64::from_polar(1.0, c * 1.7) - 1.0) / (I * c);
        assert!((phase_integral(c, 1.7) - want).norm() < 1e-14);
    }

    #[test]
    fn double_integral_against_quadrature() {
        for &(a, b) in &[(0.1, 0.2), (3.0, -2.0), (0.01, 40.0), (25.0, 0.05), (-7.0, 7.0), (0.0, 0.0)] {
            let t = 1.3;
            let direct = integrate_complex(
                |x| Complex64::from_polar(1.0, a * x) * phase_integral(b, x),
                0.0,
                t,
                1e-14,
                1e-13,
            )
            .unwrap();
            let got = double_phase_integral(a, b, t);
            assert!((got - direct).norm() < 1e-11 * (1.0 + direct.norm()), "{a} {b}");
        }
    }

    #[test]
    fn closed_forms_against_printed_integrals() {
        let d = Drive {
            omega0: 3.0,
            n_spins: 5,
            omega_com: 40.0,
            mu: 46.0,
            phi: 0.4,
        };
        let (t0, t) = (0.2, 1.5);
        let alpha = integrate_complex(
            |s| I * (d.omega0 / 5f64.sqrt()) * Complex64::from_polar((d.mu * s + d.phi).cos(), d.omega_com * s),
            t0,
            t,
            1e-14,
            1e-13,
        )
        .unwrap();
        assert!((d.alpha(t, t0) - alpha).norm() < 1e-9 * alpha.norm());
        let inner = |s: f64| {
            integrate(
                |sp| (d.mu * sp + d.phi).cos() * (d.omega_com * (s - sp)).sin(),
                t0,
                s,
                1e-15,
                1e-13,
            )
            .unwrap()
        };
        let j = -2.0 * d.omega0 * d.omega0 / 5.0
            * integrate(|s| (d.mu * s + d.phi).cos() * inner(s), t0, t, 1e-14, 1e-12).unwrap();
        assert!((d.coupling(t, t0) - j).abs() < 1e-9 * j.abs());
    }

    #[test]
    fn rwa_limits() {
        let n = 10;
        let p = PhononParams {
            omega0: 50.0,
            omega_z: 1e6,
            delta: 1e3,
            phi1: 0.3,
            phi2: 0.3,
            nbar: 0.0,
            t_pi: 0.0,
        };
        let t = TWO_PI / p.delta;
        let a = alpha_full(&p, n, t, 0.0);
        assert!(a.norm() <= 1e-3 * p.omega0 / (p.delta * (n as f64).sqrt()));
        let j = j_full(&p, n, t, 0.0);
        let want = p.omega0 * p.omega0 / (2.0 * p.delta);
        assert!((j * n as f64 / t - want).abs() < 0.01 * want);
        assert!(alpha_rwa(&p, n, t, 0.0).norm() < 1e-12);
        let p0 = PhononParams { phi1: 0.0, ..p };
        let half = alpha_rwa(&p0, n, std::f64::consts::PI / p.delta, 0.0);
        let want = p.omega0 / (p.delta * (n as f64).sqrt());
        assert!((half - Complex64::new(want, 0.0)).norm() < 1e-12 * want);
    }

    #[test]
    fn zero_drive() {
        let p = PhononParams {
            omega0: 0.0,
            omega_z: 100.0,
            delta: 5.0,
            phi1: 0.0,
            phi2: 0.0,
            nbar: 1.0,
            t_pi: 0.0,
        };
        assert_eq!(alpha_full(&p, 4, 1.0, 0.0), ZERO);
        assert_eq!(j_full(&p, 4, 1.0, 0.0), 0.0);
    }

    #[test]
    fn decoupled_limit_matches_pure_protocol() {
        let n = 8;
        let j = 0.9;
        let tau = 0.5;
        let pair = DisplacementPair { alpha: ZERO, beta: ZERO };
        let seq = crate::protocol::EchoSequence::new(n, j * n as f64 / tau, tau)
            .unwrap()
            .with_phi_grid(vec![0.0, 0.7, 2.0, std::f64::consts::PI]);
        let pure = crate::protocol::run_echo(&seq).unwrap();
        for (i, &phi) in seq.phi_grid.iter().enumerate() {
            let f = thermal_fidelity(n, pair, 3.0, 0.0, j, -j, phi, tau).unwrap();
            let m = thermal_sx(n, pair, 3.0, 0.0, j, -j, phi, tau).unwrap();
            assert!((f - pure.fidelity[i]).abs() < 1e-10);
            assert!((2.0 * m / n as f64 - pure.magnetization[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn general_path_matches_fast_path_at_tiny_displacement() {
        let n = 6;
        let kernel = PhononKernel::new(n, &[0.4, 2.9]).unwrap();
        let tiny = DisplacementPair {
            alpha: Complex64::new(1e-7, 0.0),
            beta: Complex64::new(0.0, 1e-7),
        };
        let arms = EchoArms::from_parts(n, tiny, 0.3, -0.25, 0.7, 1.0);
        let zero = EchoArms::from_parts(n, DisplacementPair { alpha: ZERO, beta: ZERO }, 0.3, -0.25, 0.7, 1.0);
        let f_general = kernel.fidelity(&arms, 2.0);
        let f_fast = kernel.fidelity(&zero, 2.0);
        let m_general = kernel.sx(&arms, 2.0);
        let m_fast = kernel.sx(&zero, 2.0);
        for i in 0..2 {
            assert!((f_general[i] - f_fast[i]).abs() < 1e-9);
            assert!((m_general[i] - m_fast[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_average_without_noise_is_single_kernel() {
        let avg = noise_average(&NoiseParams::none(), |s| Ok(s.b + 2.5)).unwrap();
        assert_eq!(avg.mean, 2.5);
        assert_eq!(avg.stderr, 0.0);
    }

    #[test]
    fn quadrature_noise_integrates_gaussian_moments() {
        let noise = NoiseParams {
            delta_com: 2.0,
            delta_b: 1.0,
            sample_count: 12,
            rng_seed: 0,
            mode: NoiseMode::Quadrature,
        };
        let avg = noise_average(&noise, |s| Ok(s.delta_omega_z.powi(2) + s.b.powi(4))).unwrap();
        assert!((avg.mean - (4.0 + 3.0 * 0.0625)).abs() < 1e-10);
    }

    #[test]
    fn nbar_beta_round_trip() {
        let b = beta_from_nbar(6.0, 2.0);
        assert!((nbar_from_beta(b, 2.0) - 6.0).abs() < 1e-12);
    }
}
