//! Exponential-cost reference implementations on the full `2^N` product
//! space. Index bit `i` is set when spin `i` points down (z basis) or is in
//! `|->` (x basis).

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::collective::{Axis, DickeVector};
use crate::error::{Error, Result};
use crate::lindblad::{DecoherenceRates, EffectiveField};
use crate::ode::{dopri5, rk4_step, Tolerance};
use crate::phonon::{NoiseSample, PhononParams};
use crate::protocol::{correlation_spectrum, mqc_spectrum, CorrelationSpectrum, MqcSpectrum};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub const MAX_STATEVECTOR_SPINS: usize = 14;
pub const MAX_DENSITY_SPINS: usize = 7;

/// Couplings of `H = sum_{i<j} J_ij sigma_z^i sigma_z^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    j: DMatrix<f64>,
}

impl CouplingMatrix {
    pub fn new(j: DMatrix<f64>) -> Result<Self> {
        let n = j.nrows();
        if j.ncols() != n {
            return Err(Error::DimensionMismatch {
                left: n,
                right: j.ncols(),
            });
        }
        for a in 0..n {
            if j[(a, a)] != 0.0 {
                return Err(Error::InvalidParameter("coupling matrix needs a zero diagonal".into()));
            }
            for b in 0..n {
                if !j[(a, b)].is_finite() || j[(a, b)] != j[(b, a)] {
                    return Err(Error::InvalidParameter("coupling matrix must be finite and symmetric".into()));
                }
            }
        }
        Ok(Self { j })
    }

    /// `J_ij = coupling / N`, the collective Ising model.
    pub fn all_to_all(n_spins: usize, coupling: f64) -> Self {
        let v = coupling / n_spins as f64;
        Self {
            j: DMatrix::from_fn(n_spins, n_spins, |a, b| if a == b { 0.0 } else { v }),
        }
    }

    /// Open chain with equal couplings up to `range` sites apart.
    pub fn chain(n_spins: usize, range: usize, coupling: f64) -> Self {
        Self {
            j: DMatrix::from_fn(n_spins, n_spins, |a, b| {
                let d = a.abs_diff(b);
                if d >= 1 && d <= range {
                    coupling
                } else {
                    0.0
                }
            }),
        }
    }

    /// Ring where each site couples to the sites `offsets` away on either side.
    pub fn circulant(n_spins: usize, offsets: &[usize], coupling: f64) -> Self {
        Self {
            j: DMatrix::from_fn(n_spins, n_spins, |a, b| {
                let d = a.abs_diff(b);
                let d = d.min(n_spins - d);
                if d > 0 && offsets.contains(&d) {
                    coupling
                } else {
                    0.0
                }
            }),
        }
    }

    /// A `k`-regular circulant graph.
    pub fn regular(n_spins: usize, k: usize, coupling: f64) -> Result<Self> {
        if k >= n_spins || (k % 2 == 1 && n_spins % 2 == 1) {
            return Err(Error::InvalidParameter(format!("no {k}-regular circulant on {n_spins} sites")));
        }
        let mut offsets: Vec<usize> = (1..=k / 2).collect();
        if k % 2 == 1 {
            offsets.push(n_spins / 2);
        }
        Ok(Self::circulant(n_spins, &offsets, coupling))
    }

    pub fn n_spins(&self) -> usize {
        self.j.nrows()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.j[(a, b)]
    }

    pub fn degree(&self, a: usize) -> usize {
        (0..self.n_spins()).filter(|&b| self.j[(a, b)] != 0.0).count()
    }

    /// Diagonal of `H` (plus `B sum sigma_z`) over the product basis.
    pub fn energies(&self, b: f64) -> Vec<f64> {
        let n = self.n_spins();
        (0..1usize << n)
            .map(|x| {
                let z = |i: usize| if x >> i & 1 == 1 { -1.0 } else { 1.0 };
                let mut e = 0.0;
                for i in 0..n {
                    e += b * z(i);
                    for j in i + 1..n {
                        e += self.j[(i, j)] * z(i) * z(j);
                    }
                }
                e
            })
            .collect()
    }
}

/// A state on the full product space.
#[derive(Debug, Clone, PartialEq)]
pub enum FullState {
    Pure { n_spins: usize, psi: Vec<Complex64> },
    Mixed { n_spins: usize, rho: DMatrix<Complex64> },
}

impl FullState {
    pub fn pure(n_spins: usize, psi: Vec<Complex64>) -> Result<Self> {
        check_size(n_spins, MAX_STATEVECTOR_SPINS)?;
        if psi.len() != 1 << n_spins {
            return Err(Error::DimensionMismatch {
                left: psi.len(),
                right: 1 << n_spins,
            });
        }
        Ok(Self::Pure { n_spins, psi })
    }

    pub fn mixed(n_spins: usize, rho: DMatrix<Complex64>) -> Result<Self> {
        check_size(n_spins, MAX_DENSITY_SPINS)?;
        let dim = 1 << n_spins;
        if rho.nrows() != dim || rho.ncols() != dim {
            return Err(Error::DimensionMismatch {
                left: rho.nrows(),
                right: dim,
            });
        }
        Ok(Self::Mixed { n_spins, rho })
    }

    /// `|+...+>`.
    pub fn plus_state(n_spins: usize) -> Result<Self> {
        check_size(n_spins, MAX_STATEVECTOR_SPINS)?;
        let dim = 1usize << n_spins;
        let a = Complex64::new((dim as f64).sqrt().recip(), 0.0);
        Ok(Self::Pure {
            n_spins,
            psi: vec![a; dim],
        })
    }

    /// Expands a z-basis Dicke vector over product states.
    pub fn from_dicke(state: &DickeVector) -> Result<Self> {
        let z = state.to_basis(crate::collective::Basis::Z);
        let n = z.n_spins();
        check_size(n, MAX_STATEVECTOR_SPINS)?;
        let binom = crate::binom::LogBinomTable::new(n);
        let psi = (0..1usize << n)
            .map(|x| {
                let k = x.count_ones() as usize;
                z.amplitudes()[k] * (-0.5 * binom.ln_choose(n, k)).exp()
            })
            .collect();
        Ok(Self::Pure { n_spins: n, psi })
    }

    pub fn n_spins(&self) -> usize {
        match self {
            Self::Pure { n_spins, .. } | Self::Mixed { n_spins, .. } => *n_spins,
        }
    }

    pub fn to_density(&self) -> Result<DMatrix<Complex64>> {
        match self {
            Self::Pure { n_spins, psi } => {
                check_size(*n_spins, MAX_DENSITY_SPINS)?;
                let v = nalgebra::DVector::from_column_slice(psi);
                Ok(&v * v.adjoint())
            }
            Self::Mixed { rho, .. } => Ok(rho.clone()),
        }
    }

    /// `| ||psi||^2 - 1 |` or `|tr rho - 1|`.
    pub fn normalization_error(&self) -> f64 {
        match self {
            Self::Pure { psi, .. } => (psi.iter().map(|a| a.norm_sqr()).sum::<f64>() - 1.0).abs(),
            Self::Mixed { rho, .. } => (rho.trace().re - 1.0).abs(),
        }
    }

    /// Projection onto the symmetric (Dicke) sector, as z-basis amplitudes.
    pub fn symmetric_amplitudes(&self) -> Result<Vec<Complex64>> {
        let (n, psi) = match self {
            Self::Pure { n_spins, psi } => (*n_spins, psi),
            Self::Mixed { .. } => return Err(Error::InvalidParameter("needs a pure state".into())),
        };
        let binom = crate::binom::LogBinomTable::new(n);
        let mut out = vec![ZERO; n + 1];
        for (x, a) in psi.iter().enumerate() {
            out[x.count_ones() as usize] += a;
        }
        for (k, v) in out.iter_mut().enumerate() {
            *v *= (-0.5 * binom.ln_choose(n, k)).exp();
        }
        Ok(out)
    }
}

fn check_size(n: usize, limit: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if n > limit {
        return Err(Error::TooLarge { n, limit });
    }
    Ok(())
}

/// `exp(-i phi sigma_axis / 2)` in (up, down) order.
fn qubit_rotation(axis: Axis, phi: f64) -> [[Complex64; 2]; 2] {
    let c = Complex64::new((phi / 2.0).cos(), 0.0);
    let s = (phi / 2.0).sin();
    match axis {
        Axis::X => [[c, -I * s], [-I * s, c]],
        Axis::Y => [[c, Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), c]],
        Axis::Z => [
            [Complex64::from_polar(1.0, -phi / 2.0), ZERO],
            [ZERO, Complex64::from_polar(1.0, phi / 2.0)],
        ],
    }
}

fn apply_qubit(psi: &mut [Complex64], q: usize, u: &[[Complex64; 2]; 2]) {
    let bit = 1usize << q;
    for x in 0..psi.len() {
        if x & bit == 0 {
            let (a, b) = (psi[x], psi[x | bit]);
            psi[x] = u[0][0] * a + u[0][1] * b;
            psi[x | bit] = u[1][0] * a + u[1][1] * b;
        }
    }
}

fn apply_all_qubits(psi: &mut [Complex64], n: usize, u: &[[Complex64; 2]; 2]) {
    for q in 0..n {
        apply_qubit(psi, q, u);
    }
}

/// `U rho U^dag` with `U` the same gate on every qubit.
fn conjugate_all(rho: &DMatrix<Complex64>, n: usize, u: &[[Complex64; 2]; 2]) -> DMatrix<Complex64> {
    let dim = rho.nrows();
    let mut out = rho.clone();
    for c in 0..dim {
        let mut col: Vec<Complex64> = out.column(c).iter().copied().collect();
        apply_all_qubits(&mut col, n, u);
        out.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let uc = [[u[0][0].conj(), u[0][1].conj()], [u[1][0].conj(), u[1][1].conj()]];
    for r in 0..dim {
        let mut row: Vec<Complex64> = out.row(r).iter().copied().collect();
        apply_all_qubits(&mut row, n, &uc);
        for (c, v) in row.into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    out
}

/// Global rotation `exp(-i phi S_axis)`.
pub fn rotate_all(state: &FullState, axis: Axis, phi: f64) -> FullState {
    let u = qubit_rotation(axis, phi);
    match state {
        FullState::Pure { n_spins, psi } => {
            let mut psi = psi.clone();
            apply_all_qubits(&mut psi, *n_spins, &u);
            FullState::Pure { n_spins: *n_spins, psi }
        }
        FullState::Mixed { n_spins, rho } => FullState::Mixed {
            n_spins: *n_spins,
            rho: conjugate_all(rho, *n_spins, &u),
        },
    }
}

/// Exact evolution under `sum_{i<j} J_ij sigma_z^i sigma_z^j` for time `tau`.
pub fn evolve_general_ising(state: &FullState, j: &CouplingMatrix, tau: f64) -> Result<FullState> {
    if state.n_spins() != j.n_spins() {
        return Err(Error::DimensionMismatch {
            left: state.n_spins(),
            right: j.n_spins(),
        });
    }
    let e = j.energies(0.0);
    Ok(match state {
        FullState::Pure { n_spins, psi } => FullState::Pure {
            n_spins: *n_spins,
            psi: psi
                .iter()
                .zip(&e)
                .map(|(a, en)| a * Complex64::from_polar(1.0, -en * tau))
                .collect(),
        },
        FullState::Mixed { n_spins, rho } => FullState::Mixed {
            n_spins: *n_spins,
            rho: DMatrix::from_fn(rho.nrows(), rho.ncols(), |r, c| {
                rho[(r, c)] * Complex64::from_polar(1.0, -(e[r] - e[c]) * tau)
            }),
        },
    })
}

/// `<sigma_x^i>` for every spin of a pure state.
pub fn sigma_x_per_spin(psi: &[Complex64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| {
            let bit = 1usize << q;
            psi.iter()
                .enumerate()
                .map(|(x, a)| (a.conj() * psi[x ^ bit]).re)
                .sum()
        })
        .collect()
}

/// Outcome of one echo on the full space.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralEcho {
    pub fidelity: f64,
    /// `(1/N) sum_i <sigma_x^i>`.
    pub magnetization: f64,
    pub per_spin: Vec<f64>,
}

fn arm(psi: &mut Vec<Complex64>, energies: &[f64], tau: f64, n: usize, echo: Option<Axis>) {
    let phase = |psi: &mut Vec<Complex64>, t: f64| {
        for (a, e) in psi.iter_mut().zip(energies) {
            *a *= Complex64::from_polar(1.0, -e * t);
        }
    };
    match echo {
        None => phase(psi, tau),
        Some(axis) => {
            phase(psi, tau / 2.0);
            apply_all_qubits(psi, n, &qubit_rotation(axis, std::f64::consts::PI));
            phase(psi, tau / 2.0);
        }
    }
}

/// Forward arm under `H`, rotation `R_x(phi)`, reversed arm under `-H`,
/// starting from `|+...+>`.
pub fn echo_general(j: &CouplingMatrix, tau: f64, phi: f64, echo: Option<Axis>) -> Result<GeneralEcho> {
    let n = j.n_spins();
    check_size(n, MAX_STATEVECTOR_SPINS)?;
    let e = j.energies(0.0);
    let back: Vec<f64> = e.iter().map(|x| -x).collect();
    let FullState::Pure { psi: psi0, .. } = FullState::plus_state(n)? else {
        unreachable!()
    };
    let mut psi = psi0.clone();
    arm(&mut psi, &e, tau, n, echo);
    apply_all_qubits(&mut psi, n, &qubit_rotation(Axis::X, phi));
    arm(&mut psi, &back, tau, n, echo);
    let ov: Complex64 = psi0.iter().zip(&psi).map(|(a, b)| a.conj() * b).sum();
    let per_spin = sigma_x_per_spin(&psi, n);
    Ok(GeneralEcho {
        fidelity: ov.norm_sqr(),
        magnetization: per_spin.iter().sum::<f64>() / n as f64,
        per_spin,
    })
}

/// `A_m` of the averaged magnetization for arbitrary couplings.
pub fn magnetization_otoc_general(j: &CouplingMatrix, tau: f64, phis: &[f64]) -> Result<CorrelationSpectrum> {
    let samples = phis
        .iter()
        .map(|&phi| echo_general(j, tau, phi, None).map(|r| (phi, r.magnetization)))
        .collect::<Result<Vec<_>>>()?;
    correlation_spectrum(&samples, j.n_spins(), tau)
}

/// `I_m` from the fidelity sweep for arbitrary couplings.
pub fn fidelity_spectrum_general(j: &CouplingMatrix, tau: f64, phis: &[f64]) -> Result<MqcSpectrum> {
    let samples = phis
        .iter()
        .map(|&phi| echo_general(j, tau, phi, None).map(|r| (phi, r.fidelity)))
        .collect::<Result<Vec<_>>>()?;
    mqc_spectrum(&samples, j.n_spins(), tau)
}

/// `tr(rho_0 C^dag C)` with `C = [W, rho_0]`, `W = U^dag R_x(phi) U` and
/// `rho_0 = |+...+><+...+|`, built from dense operators.
pub fn commutator_norm(j: &CouplingMatrix, tau: f64, phi: f64) -> Result<f64> {
    let n = j.n_spins();
    check_size(n, MAX_DENSITY_SPINS)?;
    let dim = 1usize << n;
    let e = j.energies(0.0);
    let u = DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            Complex64::from_polar(1.0, -e[r] * tau)
        } else {
            ZERO
        }
    });
    let mut rot = DMatrix::from_element(dim, dim, ZERO);
    let g = qubit_rotation(Axis::X, phi);
    for c in 0..dim {
        let mut col = vec![ZERO; dim];
        col[c] = ONE;
        apply_all_qubits(&mut col, n, &g);
        rot.set_column(c, &nalgebra::DVector::from_vec(col));
    }
    let w = u.adjoint() * rot * &u;
    let rho0 = FullState::plus_state(n)?.to_density()?;
    let comm = &w * &rho0 - &rho0 * &w;
    Ok((rho0 * comm.adjoint() * comm).trace().re)
}

/// `H^{otimes N} rho H^{otimes N}`: the density matrix in the x product basis.
pub fn to_x_basis(rho: &DMatrix<Complex64>, n: usize) -> DMatrix<Complex64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let had = [[Complex64::new(h, 0.0), Complex64::new(h, 0.0)], [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)]];
    conjugate_all(rho, n, &had)
}

/// `I_m = sum |rho_{a a'}|^2` over x-basis elements with `M_a - M_a' = m`.
pub fn coherence_sectors(state: &FullState) -> Result<MqcSpectrum> {
    let n = state.n_spins();
    let rho = to_x_basis(&state.to_density()?, n);
    let mut comps = vec![0.0; 2 * n + 1];
    for r in 0..rho.nrows() {
        for c in 0..rho.ncols() {
            // M = N/2 - popcount
            let m = c.count_ones() as i64 - r.count_ones() as i64;
            comps[(m + n as i64) as usize] += rho[(r, c)].norm_sqr();
        }
    }
    Ok(MqcSpectrum::from_components(n, comps, 0.0))
}

/// Integrates the full master equation with local decay `up -> down`
/// (`Gamma_ud`), `down -> up` (`Gamma_du`) and dephasing `Gamma_el + Gamma_add`.
pub fn lindblad_full(
    rho: &DMatrix<Complex64>,
    j: &CouplingMatrix,
    rates: &DecoherenceRates,
    field: EffectiveField,
    t: f64,
) -> Result<DMatrix<Complex64>> {
    let n = j.n_spins();
    check_size(n, MAX_DENSITY_SPINS)?;
    rates.validate()?;
    let dim = 1usize << n;
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch {
            left: rho.nrows(),
            right: dim,
        });
    }
    let e = j.energies(field.b);
    let deph = rates.dephasing();
    let (g_ud, g_du) = (rates.gamma_ud, rates.gamma_du);
    // column-major flattening: index = r + c * dim
    let y0: Vec<Complex64> = rho.iter().copied().collect();
    let rhs = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        for c in 0..dim {
            for r in 0..dim {
                let v = y[r + c * dim];
                let mut acc = -I * (e[r] - e[c]) * v;
                for q in 0..n {
                    let bit = 1usize << q;
                    let (dr, dc) = (r & bit != 0, c & bit != 0);
                    let src = y[(r ^ bit) + (c ^ bit) * dim];
                    let ups = (!dr) as u8 + (!dc) as u8;
                    let downs = 2 - ups;
                    if dr && dc {
                        acc += src * g_ud;
                    }
                    if !dr && !dc {
                        acc += src * g_du;
                    }
                    acc -= v * (0.5 * (g_ud * ups as f64 + g_du * downs as f64));
                    if dr != dc {
                        acc -= v * (0.5 * deph);
                    }
                }
                dy[r + c * dim] = acc;
            }
        }
    };
    let tol = Tolerance {
        rel: 1e-11,
        abs: 1e-14,
        ..Default::default()
    };
    let y = dopri5(rhs, 0.0, t, &y0, tol)?;
    Ok(DMatrix::from_column_slice(dim, dim, &y))
}

/// Echo sequence for the spin-boson oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonSequence {
    pub tau: f64,
    pub phis: Vec<f64>,
    pub sample: NoiseSample,
    pub mid_arm_echo: bool,
}

/// Thermally averaged observables from the truncated-Fock oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBosonResult {
    pub fidelity: Vec<f64>,
    /// `<S_x>` after the sequence.
    pub sx: Vec<f64>,
    /// Fock cutoff of the reported (doubled) run.
    pub n_max: usize,
    /// Number of initial Fock states in the thermal sum.
    pub fock_states: usize,
    /// Largest change between the base and doubled cutoffs.
    pub truncation_change: f64,
}

/// `exp(-i phi S_x)` on the z Dicke basis from an eigendecomposition.
fn dicke_rotation_x(n: usize, phi: f64) -> DMatrix<Complex64> {
    let sx = DMatrix::from_fn(n + 1, n + 1, |r, c| {
        // <k-1|S_x|k> = sqrt(k (N-k+1))/2
        if r + 1 == c {
            0.5 * ((c * (n + 1 - c)) as f64).sqrt()
        } else if c + 1 == r {
            0.5 * ((r * (n + 1 - r)) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(sx);
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let d = DMatrix::from_fn(n + 1, n + 1, |r, c| {
        if r == c {
            Complex64::from_polar(1.0, -phi * eig.eigenvalues[r])
        } else {
            ZERO
        }
    });
    &v * d * v.transpose()
}

struct BosonRun<'a> {
    n: usize,
    dim: usize,
    p: &'a PhononParams,
    seq: &'a SpinBosonSequence,
}

impl BosonRun<'_> {
    fn s_of(&self, k: usize) -> f64 {
        self.n as f64 - 2.0 * k as f64
    }

    /// Integrates one driven segment; `state[k * dim + m]`.
    fn segment(&self, state: &mut [Complex64], mu: f64, phi: f64, t0: f64, t1: f64) {
        let omega = self.p.omega_z + self.seq.sample.delta_omega_z;
        let b = self.seq.sample.b;
        let amp = self.p.omega0 / (self.n as f64).sqrt();
        let dim = self.dim;
        let n = self.n;
        let s_vals: Vec<f64> = (0..=n).map(|k| self.s_of(k)).collect();
        let sq: Vec<f64> = (0..=dim).map(|m| (m as f64).sqrt()).collect();
        let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
            let g = -amp * (mu * t + phi).cos();
            let down = Complex64::from_polar(g, -omega * t); // multiplies a
            let up = down.conj(); // multiplies a^dag
            for k in 0..=n {
                let s = s_vals[k];
                let row = &y[k * dim..(k + 1) * dim];
                let out = &mut dy[k * dim..(k + 1) * dim];
                for m in 0..dim {
                    let mut h = row[m] * b;
                    if m + 1 < dim {
                        h += down * row[m + 1] * sq[m + 1];
                    }
                    if m > 0 {
                        h += up * row[m - 1] * sq[m];
                    }
                    out[m] = -I * h * s;
                }
            }
        };
        let span = t1 - t0;
        let coupling = amp * n as f64 * 2.0 * (dim as f64).sqrt();
        let steps = ((omega.abs() * span / 0.05).ceil())
            .max((coupling * span / 0.3).ceil())
            .max(1.0) as usize;
        let h = span / steps as f64;
        let mut scratch: [Vec<Complex64>; 5] = std::array::from_fn(|_| vec![ZERO; state.len()]);
        for i in 0..steps {
            rk4_step(&mut f, t0 + i as f64 * h, state, h, &mut scratch);
        }
    }

    fn apply_spin(&self, state: &[Complex64], u: &DMatrix<Complex64>) -> Vec<Complex64> {
        let dim = self.dim;
        let mut out = vec![ZERO; state.len()];
        for kp in 0..=self.n {
            for k in 0..=self.n {
                let w = u[(kp, k)];
                if w == ZERO {
                    continue;
                }
                for m in 0..dim {
                    out[kp * dim + m] += w * state[k * dim + m];
                }
            }
        }
        out
    }

    fn arm(&self, state: &mut Vec<Complex64>, mu: f64, phi: f64, t0: f64, flip: &DMatrix<Complex64>) {
        let tau = self.seq.tau;
        if self.seq.mid_arm_echo {
            self.segment(state, mu, phi, t0, t0 + tau / 2.0);
            *state = self.apply_spin(state, flip);
            self.segment(state, mu, phi, t0 + tau / 2.0, t0 + tau);
        } else {
            self.segment(state, mu, phi, t0, t0 + tau);
        }
    }

    /// Observables for one initial Fock state, per angle.
    fn run(&self, n0: usize, c: &[f64], rotations: &[DMatrix<Complex64>], flip: &DMatrix<Complex64>) -> Vec<(f64, f64)> {
        let (n, dim) = (self.n, self.dim);
        let mut state = vec![ZERO; (n + 1) * dim];
        for k in 0..=n {
            state[k * dim + n0] = Complex64::new(c[k], 0.0);
        }
        let p = self.p;
        let tau = self.seq.tau;
        self.arm(&mut state, p.omega_z + p.delta, p.phi1, 0.0, flip);
        rotations
            .iter()
            .map(|rot| {
                let mut st = self.apply_spin(&state, rot);
                self.arm(&mut st, p.omega_z - p.delta, p.phi2, tau, flip);
                let mut proj = vec![ZERO; dim];
                for k in 0..=n {
                    for m in 0..dim {
                        proj[m] += st[k * dim + m] * c[k];
                    }
                }
                let fid: f64 = proj.iter().map(|z| z.norm_sqr()).sum();
                let mut sx = 0.0;
                for k in 1..=n {
                    let l = 0.5 * ((k * (n + 1 - k)) as f64).sqrt();
                    let dot: Complex64 = (0..dim).map(|m| st[(k - 1) * dim + m].conj() * st[k * dim + m]).sum();
                    sx += 2.0 * l * dot.re;
                }
                (fid, sx)
            })
            .collect()
    }
}

/// Thermal weights `nbar^n / (nbar + 1)^(n+1)` until the cumulative weight
/// exceeds `1 - 1e-8`.
pub fn boltzmann_weights(nbar: f64) -> Vec<f64> {
    let mut w = Vec::new();
    let mut total = 0.0;
    let ratio = nbar / (nbar + 1.0);
    let mut p = 1.0 / (nbar + 1.0);
    while total <= 1.0 - 1e-8 && w.len() < 100_000 {
        w.push(p);
        total += p;
        p *= ratio;
    }
    w
}

/// Integrates the spin-phonon Hamiltonian over the echo sequence on a
/// truncated Fock space and averages over a thermal initial phonon state.
/// The cutoff is raised, if needed, so every retained initial Fock state
/// sits well inside the space; convergence is checked by doubling it.
pub fn spin_boson_evolve(
    n_spins: usize,
    p: &PhononParams,
    n_max: usize,
    seq: &SpinBosonSequence,
) -> Result<SpinBosonResult> {
    check_size(n_spins, 6)?;
    p.validate()?;
    if (n_max as f64) < 10.0 * (p.nbar + 1.0) {
        return Err(Error::InvalidParameter(format!(
            "n_max = {n_max} is below 10 (nbar + 1)"
        )));
    }
    let weights = boltzmann_weights(p.nbar);
    let base = n_max.max(weights.len() + 30);
    let c: Vec<f64> = {
        let binom = crate::binom::LogBinomTable::new(n_spins);
        (0..=n_spins)
            .map(|k| (0.5 * binom.ln_choose(n_spins, k) - 0.5 * n_spins as f64 * std::f64::consts::LN_2).exp())
            .collect()
    };
    let rotations: Vec<DMatrix<Complex64>> = seq.phis.iter().map(|&phi| dicke_rotation_x(n_spins, phi)).collect();
    let flip = dicke_rotation_x(n_spins, std::f64::consts::PI);
    let total_w: f64 = weights.iter().sum();
    let thermal = |dim: usize| -> Vec<(f64, f64)> {
        let run = BosonRun {
            n: n_spins,
            dim,
            p,
            seq,
        };
        let mut acc = vec![(0.0, 0.0); seq.phis.len()];
        for (n0, w) in weights.iter().enumerate() {
            for (a, (f, s)) in acc.iter_mut().zip(run.run(n0, &c, &rotations, &flip)) {
                a.0 += w * f / total_w;
                a.1 += w * s / total_w;
            }
        }
        acc
    };
    let coarse = thermal(base);
    let fine = thermal(2 * base);
    let change = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
        .fold(0.0, f64::max);
    if change > 1e-7 {
        return Err(Error::Convergence(format!(
            "Fock truncation not converged: change {change:.2e} on doubling n_max = {base}"
        )));
    }
    Ok(SpinBosonResult {
        fidelity: fine.iter().map(|x| x.0).collect(),
        sx: fine.iter().map(|x| x.1).collect(),
        n_max: 2 * base,
        fock_states: weights.len(),
        truncation_change: change,
    })
}
