//! Permutation-symmetric pure states of N spin-1/2 particles.
//!
//! A [`DickeVector`] stores amplitudes over the N+1 Dicke states of a chosen
//! quantization axis. Index `k` counts spins anti-aligned with that axis, so
//! the collective projection is `M = N/2 - k`. The x-axis Dicke states are
//! defined as `|k>_x = R_y(pi/2) |k>_z`; with this choice `|+...+>` is `k = 0`
//! in the x basis with no extra phase.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wigner::{small_d_eigen, small_d_recursive, wigner_d, RotationConvention};

/// Quantization axis of a [`DickeVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    X,
    Z,
}

/// Rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DickeVector {
    n_spins: usize,
    amplitudes: Vec<Complex64>,
    basis: Basis,
}

impl DickeVector {
    /// Builds a state from amplitudes, rejecting unnormalized input.
    pub fn new(amplitudes: Vec<Complex64>, basis: Basis) -> Result<Self> {
        if amplitudes.len() < 2 {
            return Err(Error::InvalidParameter(
                "a Dicke vector needs at least one spin".into(),
            ));
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e3 * NORM_TOL * amplitudes.len() as f64 {
            return Err(Error::InvalidParameter(format!(
                "amplitudes are not normalized (sum |c|^2 = {norm})"
            )));
        }
        Ok(Self {
            n_spins: amplitudes.len() - 1,
            amplitudes,
            basis,
        })
    }

    /// Builds a state and rescales it to unit norm.
    pub fn normalized(mut amplitudes: Vec<Complex64>, basis: Basis) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidParameter("zero or non-finite vector".into()));
        }
        for a in amplitudes.iter_mut() {
            *a /= norm;
        }
        Self::new(amplitudes, basis)
    }

    /// Dicke basis state `k` of the given axis.
    pub fn dicke(n_spins: usize, k: usize, basis: Basis) -> Result<Self> {
        if n_spins == 0 || k > n_spins {
            return Err(Error::InvalidParameter(format!(
                "Dicke index {k} invalid for N = {n_spins}"
            )));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); n_spins + 1];
        amps[k] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_spins,
            amplitudes: amps,
            basis,
        })
    }

    /// All spins along +x, expressed in `basis`.
    pub fn plus_state(n_spins: usize, basis: Basis) -> Result<Self> {
        let x = Self::dicke(n_spins, 0, Basis::X)?;
        Ok(x.to_basis(basis))
    }

    /// Uniformly random state on the unit sphere of C^(N+1).
    pub fn random<R: Rng + ?Sized>(n_spins: usize, basis: Basis, rng: &mut R) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let amps: Vec<Complex64> = (0..=n_spins)
            .map(|_| {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                Complex64::new(re, im)
            })
            .collect();
        Self::normalized(amps, basis)
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Collective projection `M = N/2 - k` along the quantization axis.
    pub fn projection(&self, k: usize) -> f64 {
        self.n_spins as f64 / 2.0 - k as f64
    }

    /// Populations `|c_k|^2`.
    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Re-expresses the same state in another basis.
    pub fn to_basis(&self, basis: Basis) -> Self {
        if basis == self.basis {
            return self.clone();
        }
        let d = half_pi_d(self.n_spins);
        let amps = match (self.basis, basis) {
            // c_x = d^T c_z
            (Basis::Z, Basis::X) => apply_real_transpose(&d, &self.amplitudes),
            // c_z = d c_x
            _ => apply_real(&d, &self.amplitudes),
        };
        Self {
            n_spins: self.n_spins,
            amplitudes: amps,
            basis,
        }
    }

    pub(crate) fn from_parts(amplitudes: Vec<Complex64>, basis: Basis) -> Self {
        Self {
            n_spins: amplitudes.len() - 1,
            amplitudes,
            basis,
        }
    }
}

/// Collective Ising model `H = (J/N) sum_{i<j} sigma_z^i sigma_z^j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingParams {
    /// Coupling in s^-1 (hbar = 1). Either sign.
    pub coupling: f64,
    pub n_spins: usize,
}

impl IsingParams {
    pub fn new(coupling: f64, n_spins: usize) -> Result<Self> {
        if !coupling.is_finite() {
            return Err(Error::InvalidParameter("coupling must be finite".into()));
        }
        if n_spins == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        Ok(Self { coupling, n_spins })
    }

    /// Energy of the Dicke state with projection `m` along z.
    ///
    /// `sum_{i<j} s_i s_j = 2 M^2 - N/2`; the constant is kept, it only
    /// contributes a global phase.
    pub fn energy(&self, m: f64) -> f64 {
        let n = self.n_spins as f64;
        self.coupling / n * (2.0 * m * m - n / 2.0)
    }

    pub fn reversed(&self) -> Self {
        Self {
            coupling: -self.coupling,
            n_spins: self.n_spins,
        }
    }
}

/// Evolves a z-basis state under the collective Ising Hamiltonian for `tau`.
pub fn ising_phase_evolve(state: &DickeVector, params: &IsingParams, tau: f64) -> Result<DickeVector> {
    if state.basis != Basis::Z {
        return Err(Error::BasisMismatch {
            expected: Basis::Z,
            found: state.basis,
        });
    }
    if state.n_spins != params.n_spins {
        return Err(Error::DimensionMismatch {
            left: state.n_spins,
            right: params.n_spins,
        });
    }
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::InvalidParameter(format!("evolution time {tau} must be >= 0")));
    }
    let amps = state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(k, a)| a * Complex64::from_polar(1.0, -params.energy(state.projection(k)) * tau))
        .collect();
    Ok(DickeVector::from_parts(amps, Basis::Z))
}

/// Applies `exp(-i phi S_axis)`, staying in the state's basis.
pub fn rotate_collective(state: &DickeVector, axis: Axis, phi: f64) -> DickeVector {
    let n = state.n_spins;
    let amps = &state.amplitudes;
    let diag = |sign: f64| -> Vec<Complex64> {
        amps.iter()
            .enumerate()
            .map(|(k, a)| a * Complex64::from_polar(1.0, -sign * phi * state.projection(k)))
            .collect()
    };
    let out = match (state.basis, axis) {
        (Basis::Z, Axis::Z) | (Basis::X, Axis::X) => diag(1.0),
        (_, Axis::Y) => {
            let d = small_d(n, phi);
            apply_real(&d, amps)
        }
        (Basis::Z, Axis::X) => {
            let d = wigner_d(n, phi, RotationConvention::Zxz).expect("N within supported range");
            d.apply(amps)
        }
        (Basis::X, Axis::Z) => {
            // S_z acts as -S_x in the x-basis frame
            let d = wigner_d(n, -phi, RotationConvention::Zxz).expect("N within supported range");
            d.apply(amps)
        }
    };
    DickeVector::from_parts(out, state.basis)
}

/// `<S_x>`.
pub fn expectation_sx(state: &DickeVector) -> f64 {
    match state.basis {
        Basis::X => diagonal_expect(state),
        Basis::Z => offdiag_expect(state),
    }
}

/// `<S_z>`.
pub fn expectation_sz(state: &DickeVector) -> f64 {
    match state.basis {
        Basis::Z => diagonal_expect(state),
        Basis::X => -offdiag_expect(state),
    }
}

/// `<a|b>`.
pub fn overlap(a: &DickeVector, b: &DickeVector) -> Result<Complex64> {
    if a.n_spins != b.n_spins {
        return Err(Error::DimensionMismatch {
            left: a.n_spins,
            right: b.n_spins,
        });
    }
    if a.basis != b.basis {
        return Err(Error::BasisMismatch {
            expected: a.basis,
            found: b.basis,
        });
    }
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

fn diagonal_expect(state: &DickeVector) -> f64 {
    state
        .amplitudes
        .iter()
        .enumerate()
        .map(|(k, a)| a.norm_sqr() * state.projection(k))
        .sum()
}

/// Expectation of the real tridiagonal `(S_+ + S_-)/2` in Dicke index order.
fn offdiag_expect(state: &DickeVector) -> f64 {
    let c = &state.amplitudes;
    let mut acc = 0.0;
    for k in 1..c.len() {
        acc += ladder_element(state.n_spins, k) * (c[k - 1].conj() * c[k]).re;
    }
    acc
}

/// `<M+1| S_+ |M>` for `M = N/2 - k`.
pub(crate) fn ladder_element(n_spins: usize, k: usize) -> f64 {
    // j(j+1) - M(M+1) = k (N - k + 1)
    ((k * (n_spins + 1 - k)) as f64).sqrt()
}

/// Real small-d matrix, choosing the construction by size.
pub(crate) fn small_d(two_j: usize, angle: f64) -> DMatrix<f64> {
    if two_j <= crate::wigner::EIGEN_PATH_MAX_TWO_J {
        small_d_eigen(two_j, angle)
    } else {
        small_d_recursive(two_j, angle)
    }
}

/// `d^{N/2}(pi/2)`, the z-to-x basis change.
pub fn half_pi_d(n_spins: usize) -> DMatrix<f64> {
    small_d(n_spins, std::f64::consts::FRAC_PI_2)
}

pub(crate) fn apply_real(d: &DMatrix<f64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, x) in v.iter().enumerate() {
            acc += x * d[(r, c)];
        }
        *o = acc;
    }
    out
}

pub(crate) fn apply_real_transpose(d: &DMatrix<f64>, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, x) in v.iter().enumerate() {
            acc += x * d[(c, r)];
        }
        *o = acc;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn plus_state_in_z_basis_is_binomial() {
        let s = DickeVector::plus_state(6, Basis::Z).unwrap();
        assert!((s.norm_sqr() - 1.0).abs() < 1e-13);
        assert!((expectation_sx(&s) - 3.0).abs() < 1e-12);
        assert!(expectation_sz(&s).abs() < 1e-12);
    }

    #[test]
    fn down_state_rotated_to_plus() {
        for n in [1, 5, 48, 111] {
            let down = DickeVector::dicke(n, n, Basis::Z).unwrap();
            assert!((expectation_sz(&down) + n as f64 / 2.0).abs() < 1e-12);
            let s = rotate_collective(&down, Axis::Y, -PI / 2.0);
            assert!((expectation_sx(&s) - n as f64 / 2.0).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn basis_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DickeVector::random(9, Basis::Z, &mut rng).unwrap();
        let back = s.to_basis(Basis::X).to_basis(Basis::Z);
        for (a, b) in s.amplitudes().iter().zip(back.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
        let x = s.to_basis(Basis::X);
        assert!((expectation_sx(&x) - expectation_sx(&s)).abs() < 1e-12);
        assert!((expectation_sz(&x) - expectation_sz(&s)).abs() < 1e-12);
    }

    #[test]
    fn rotations_agree_across_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = DickeVector::random(7, Basis::Z, &mut rng).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let a = rotate_collective(&s, axis, 0.9);
            let b = rotate_collective(&s.to_basis(Basis::X), axis, 0.9).to_basis(Basis::Z);
            for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
                assert!((x - y).norm() < 1e-11, "{axis:?}");
            }
        }
    }

    #[test]
    fn rotation_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DickeVector::random(12, Basis::X, &mut rng).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let two = rotate_collective(&rotate_collective(&s, axis, 0.4), axis, 1.3);
            let one = rotate_collective(&s, axis, 1.7);
            for (x, y) in two.amplitudes().iter().zip(one.amplitudes()) {
                assert!((x - y).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn x_rotation_of_z_state_precesses_sz() {
        // exp(-i phi S_x) S_z exp(i phi S_x): <S_z> -> cos(phi) <S_z> + sin(phi) <S_y>
        let up = DickeVector::dicke(4, 0, Basis::Z).unwrap();
        let s = rotate_collective(&up, Axis::X, 0.6);
        assert!((expectation_sz(&s) - 2.0 * 0.6f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn ising_rejects_x_basis() {
        let s = DickeVector::plus_state(4, Basis::X).unwrap();
        let p = IsingParams::new(1.0, 4).unwrap();
        assert!(matches!(
            ising_phase_evolve(&s, &p, 0.1),
            Err(Error::BasisMismatch { .. })
        ));
    }

    #[test]
    fn ising_zero_time_is_identity() {
        let s = DickeVector::plus_state(6, Basis::Z).unwrap();
        let p = IsingParams::new(2.0, 6).unwrap();
        assert_eq!(ising_phase_evolve(&s, &p, 0.0).unwrap(), s);
    }

    #[test]
    fn unnormalized_rejected() {
        let amps = vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        assert!(DickeVector::new(amps, Basis::Z).is_err());
    }
}
