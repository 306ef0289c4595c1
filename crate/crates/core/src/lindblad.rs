//! Permutation-symmetric Lindblad dynamics of N spin-1/2 particles.
//!
//! A symmetric operator is expanded over occupation tuples
//! `t = (t1, t2, t3, t4)` with `t1 + t2 + t3 + t4 = N`: the number of sites
//! carrying `|u><u|`, `|u><d|`, `|d><u|` and `|d><d|` in the z product basis
//! (`u`, `d` = spin up, down). The coefficient of tuple `t` is stored
//! normalized, `c(t) = rho(t) * sqrt(N! / (t1! t2! t3! t4!))`, so that the
//! purity is `sum |c|^2`.
//!
//! Under the collective Ising Hamiltonian, a uniform field along z, local
//! decay, local pumping and local dephasing, the tuples split into closed
//! blocks labelled by `(t2, t3)`. Each block has `N - t2 - t3 + 1` entries
//! and a tridiagonal generator in `t1`. The z-coherence order `t2 - t3` is
//! conserved for any rates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binom::LogBinomTable;
use crate::collective::{Axis, Basis, DickeVector, IsingParams};
use crate::error::{Error, Result};
use crate::ode::{dopri5, Tolerance};
use crate::protocol::{mqc_spectrum, EchoSequence, MqcSpectrum};
use crate::quadrature::gauss_hermite_normal;
use crate::wigner::{i_pow, small_d_family};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Blocks up to this dimension are propagated with a dense matrix exponential.
pub const DENSE_BLOCK_LIMIT: usize = 200;

/// Local incoherent processes, all in s^-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceRates {
    /// Spontaneous decay up -> down (jump operator `sigma_-`).
    pub gamma_ud: f64,
    /// Spontaneous excitation down -> up (jump operator `sigma_+`).
    pub gamma_du: f64,
    /// Elastic dephasing (jump operator `sqrt(gamma_el) sigma_z / 2`).
    pub gamma_el: f64,
    /// Additional dephasing, added to `gamma_el`.
    pub gamma_add: f64,
}

impl DecoherenceRates {
    pub fn new(gamma_ud: f64, gamma_du: f64, gamma_el: f64, gamma_add: f64) -> Result<Self> {
        let r = Self {
            gamma_ud,
            gamma_du,
            gamma_el,
            gamma_add,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn none() -> Self {
        Self {
            gamma_ud: 0.0,
            gamma_du: 0.0,
            gamma_el: 0.0,
            gamma_add: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_ud", self.gamma_ud),
            ("gamma_du", self.gamma_du),
            ("gamma_el", self.gamma_el),
            ("gamma_add", self.gamma_add),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// `(gamma_el + gamma_add + gamma_du + gamma_ud) / 2`.
    pub fn total(&self) -> f64 {
        (self.gamma_el + self.gamma_add + self.gamma_du + self.gamma_ud) / 2.0
    }

    pub fn dephasing(&self) -> f64 {
        self.gamma_el + self.gamma_add
    }

    pub fn is_balanced(&self) -> bool {
        self.gamma_ud == self.gamma_du
    }

    pub fn is_zero(&self) -> bool {
        self.total() == 0.0
    }
}

/// Uniform field term `B sum_i sigma_z^i` (B in s^-1).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectiveField {
    pub b: f64,
}

/// Number of symmetric operator basis elements, `(N+1)(N+2)(N+3)/6`.
pub fn liouville_dim(n_spins: usize) -> usize {
    (n_spins + 1) * (n_spins + 2) * (n_spins + 3) / 6
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDensityState {
    n_spins: usize,
    data: Vec<Complex64>,
}

/// Start of block `(t2, t3)` in the flat storage; blocks are ordered by
/// `t2`, then `t3`.
fn block_offset(n: usize, t2: usize, t3: usize) -> usize {
    // sum over t2' < t2 of (r)(r+1)/2 with r = N - t2' + 1, a tetrahedral difference
    let tet = |x: usize| x * (x + 1) * (x + 2) / 6;
    let r = n + 1;
    let width = n - t2 + 1;
    tet(r) - tet(r - t2) + t3 * width - t3 * t3.saturating_sub(1) / 2
}

impl SymmetricDensityState {
    pub fn zeros(n_spins: usize) -> Self {
        Self {
            n_spins,
            data: vec![ZERO; liouville_dim(n_spins)],
        }
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.data
    }

    pub fn block_len(&self, t2: usize, t3: usize) -> usize {
        self.n_spins - t2 - t3 + 1
    }

    pub fn block(&self, t2: usize, t3: usize) -> &[Complex64] {
        let o = block_offset(self.n_spins, t2, t3);
        &self.data[o..o + self.block_len(t2, t3)]
    }

    pub fn block_mut(&mut self, t2: usize, t3: usize) -> &mut [Complex64] {
        let o = block_offset(self.n_spins, t2, t3);
        let len = self.block_len(t2, t3);
        &mut self.data[o..o + len]
    }

    /// Normalized coefficient of tuple `(t1, t2, t3, N - t1 - t2 - t3)`.
    pub fn coefficient(&self, t1: usize, t2: usize, t3: usize) -> Complex64 {
        self.block(t2, t3)[t1]
    }

    pub fn set_coefficient(&mut self, t1: usize, t2: usize, t3: usize, v: Complex64) {
        self.block_mut(t2, t3)[t1] = v;
    }

    /// Iterates over `(t2, t3)` labels in storage order.
    pub fn block_labels(n_spins: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..=n_spins).flat_map(move |t2| (0..=n_spins - t2).map(move |t3| (t2, t3)))
    }

    /// Density operator of a pure symmetric state.
    pub fn embed_pure(state: &DickeVector) -> Self {
        let z = state.to_basis(Basis::Z);
        let n = z.n_spins();
        let psi = z.amplitudes();
        let table = LogBinomTable::new(n);
        let mut out = Self::zeros(n);
        for (t2, t3) in Self::block_labels(n) {
            let b = out.block_mut(t2, t3);
            for (t1, v) in b.iter_mut().enumerate() {
                let t4 = n - t1 - t2 - t3;
                let a = t1 + t2;
                let ap = t1 + t3;
                let ln_w = 0.5
                    * (table.ln_multinomial(&[t1, t2, t3, t4])
                        - table.ln_choose(n, a)
                        - table.ln_choose(n, ap));
                *v = psi[n - a] * psi[n - ap].conj() * ln_w.exp();
            }
        }
        out
    }

    /// `1 / 2^N` times the identity.
    pub fn maximally_mixed(n_spins: usize) -> Self {
        let table = LogBinomTable::new(n_spins);
        let mut out = Self::zeros(n_spins);
        let b = out.block_mut(0, 0);
        for (t1, v) in b.iter_mut().enumerate() {
            let w = (0.5 * table.ln_choose(n_spins, t1) - n_spins as f64 * std::f64::consts::LN_2).exp();
            *v = Complex64::new(w, 0.0);
        }
        out
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &Self) -> Result<()> {
        if other.n_spins != self.n_spins {
            return Err(Error::DimensionMismatch {
                left: self.n_spins,
                right: other.n_spins,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * w;
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        let table = LogBinomTable::new(self.n_spins);
        let n = self.n_spins;
        self.block(0, 0)
            .iter()
            .enumerate()
            .map(|(t1, c)| c.re * (0.5 * table.ln_choose(n, t1)).exp())
            .sum()
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn expectation_sz(&self) -> f64 {
        let table = LogBinomTable::new(self.n_spins);
        let n = self.n_spins;
        self.block(0, 0)
            .iter()
            .enumerate()
            .map(|(t1, c)| c.re * (0.5 * table.ln_choose(n, t1)).exp() * (t1 as f64 - n as f64 / 2.0))
            .sum()
    }

    pub fn expectation_sx(&self) -> f64 {
        let n = self.n_spins;
        if n == 0 {
            return 0.0;
        }
        let table = LogBinomTable::new(n);
        let nf = n as f64;
        self.block(1, 0)
            .iter()
            .enumerate()
            .map(|(t1, c)| c.re * (0.5 * (nf.ln() + table.ln_choose(n - 1, t1))).exp())
            .sum()
    }

    /// `<+...+| rho |+...+>`.
    pub fn fidelity_plus(&self) -> f64 {
        let n = self.n_spins;
        let table = LogBinomTable::new(n);
        let ln_norm = -(n as f64) * std::f64::consts::LN_2;
        let mut acc = 0.0;
        for (t2, t3) in Self::block_labels(n) {
            for (t1, c) in self.block(t2, t3).iter().enumerate() {
                let t4 = n - t1 - t2 - t3;
                acc += c.re * (0.5 * table.ln_multinomial(&[t1, t2, t3, t4]) + ln_norm).exp();
            }
        }
        acc
    }

    /// Largest violation of `c(t1,t2,t3) = conj(c(t1,t3,t2))`.
    pub fn hermiticity_error(&self) -> f64 {
        let mut err = 0.0f64;
        for (t2, t3) in Self::block_labels(self.n_spins) {
            for (a, b) in self.block(t2, t3).iter().zip(self.block(t3, t2)) {
                err = err.max((a - b.conj()).norm());
            }
        }
        err
    }

    /// Weight `sum |c|^2` in each z-coherence order `q = t2 - t3`, for `q = -N..=N`.
    pub fn z_coherence_weights(&self) -> Vec<f64> {
        let n = self.n_spins;
        let mut w = vec![0.0; 2 * n + 1];
        for (t2, t3) in Self::block_labels(n) {
            let s: f64 = self.block(t2, t3).iter().map(|c| c.norm_sqr()).sum();
            w[(t2 as i64 - t3 as i64 + n as i64) as usize] += s;
        }
        w
    }

    /// MQC spectrum `I_m = tr(rho_m rho_-m)` with respect to the x basis.
    pub fn mqc_spectrum(&self) -> MqcSpectrum {
        let rot = rotate_superop(self, Axis::Y, -std::f64::consts::FRAC_PI_2);
        MqcSpectrum::from_components(self.n_spins, rot.z_coherence_weights(), 0.0)
    }

    /// Dense `2^N x 2^N` matrix in the z product basis. Bit `i` of an index
    /// is set when spin `i` points down.
    pub fn to_dense(&self) -> Result<DMatrix<Complex64>> {
        let n = self.n_spins;
        if n > 10 {
            return Err(Error::TooLarge { n, limit: 10 });
        }
        let table = LogBinomTable::new(n);
        let dim = 1usize << n;
        let mut rho = DMatrix::from_element(dim, dim, ZERO);
        for s in 0..dim {
            for sp in 0..dim {
                let (t1, t2, t3, t4) = tuple_of(s, sp, n);
                let w = (-0.5 * table.ln_multinomial(&[t1, t2, t3, t4])).exp();
                rho[(s, sp)] = self.coefficient(t1, t2, t3) * w;
            }
        }
        Ok(rho)
    }

    /// Projects a dense product-basis operator onto the symmetric span by
    /// averaging over each tuple class.
    pub fn from_dense(rho: &DMatrix<Complex64>) -> Result<Self> {
        let dim = rho.nrows();
        if dim == 0 || !dim.is_power_of_two() || rho.ncols() != dim {
            return Err(Error::InvalidParameter("matrix must be 2^N x 2^N".into()));
        }
        let n = dim.trailing_zeros() as usize;
        let table = LogBinomTable::new(n);
        let mut out = Self::zeros(n);
        for s in 0..dim {
            for sp in 0..dim {
                let (t1, t2, t3, _) = tuple_of(s, sp, n);
                let v = out.coefficient(t1, t2, t3) + rho[(s, sp)];
                out.set_coefficient(t1, t2, t3, v);
            }
        }
        for (t2, t3) in Self::block_labels(n) {
            for (t1, v) in out.block_mut(t2, t3).iter_mut().enumerate() {
                let t4 = n - t1 - t2 - t3;
                // sum / mult * sqrt(mult)
                *v *= (-0.5 * table.ln_multinomial(&[t1, t2, t3, t4])).exp();
            }
        }
        Ok(out)
    }
}

/// Occupation tuple of the matrix unit `|s><s'|`.
fn tuple_of(s: usize, sp: usize, n: usize) -> (usize, usize, usize, usize) {
    let mask = (1usize << n) - 1;
    let ket_up = !s & mask;
    let bra_up = !sp & mask;
    let t1 = (ket_up & bra_up).count_ones() as usize;
    let t2 = (ket_up & !bra_up & mask).count_ones() as usize;
    let t3 = (!ket_up & bra_up & mask).count_ones() as usize;
    (t1, t2, t3, n - t1 - t2 - t3)
}

/// Tridiagonal generator of one block.
#[derive(Debug, Clone)]
struct BlockGenerator {
    diag: Vec<Complex64>,
    /// `upper[i]` couples entry `i` to `i + 1`.
    upper: Vec<f64>,
    /// `lower[i]` couples entry `i + 1` to `i`.
    lower: Vec<f64>,
}

impl BlockGenerator {
    fn new(
        n: usize,
        t2: usize,
        t3: usize,
        ising: &IsingParams,
        field: &EffectiveField,
        rates: &DecoherenceRates,
    ) -> Self {
        let s = t2 + t3;
        let d = n - s + 1;
        let half_n = n as f64 / 2.0;
        let energy = |m: f64| ising.energy(m) + 2.0 * field.b * m;
        let sf = s as f64;
        let mut diag = Vec::with_capacity(d);
        for t1 in 0..d {
            let t4 = (n - s - t1) as f64;
            let t1f = t1 as f64;
            let re = -0.5 * rates.gamma_ud * (2.0 * t1f + sf)
                - 0.5 * rates.gamma_du * (2.0 * t4 + sf)
                - 0.5 * rates.dephasing() * sf;
            let mk = (t1 + t2) as f64 - half_n;
            let mb = (t1 + t3) as f64 - half_n;
            diag.push(Complex64::new(re, -(energy(mk) - energy(mb))));
        }
        let mut upper = Vec::with_capacity(d.saturating_sub(1));
        let mut lower = Vec::with_capacity(d.saturating_sub(1));
        for t1 in 0..d.saturating_sub(1) {
            // decay feeds t1 from t1 + 1, pumping feeds t1 + 1 from t1
            let t4 = (n - s - t1) as f64;
            let t1f = t1 as f64;
            upper.push(rates.gamma_ud * (t4 * (t1f + 1.0)).sqrt());
            lower.push(rates.gamma_du * ((t1f + 1.0) * t4).sqrt());
        }
        Self { diag, upper, lower }
    }

    fn dense(&self) -> DMatrix<Complex64> {
        let d = self.diag.len();
        let mut m = DMatrix::from_element(d, d, ZERO);
        for i in 0..d {
            m[(i, i)] = self.diag[i];
        }
        for i in 0..d.saturating_sub(1) {
            m[(i, i + 1)] = Complex64::new(self.upper[i], 0.0);
            m[(i + 1, i)] = Complex64::new(self.lower[i], 0.0);
        }
        m
    }

    fn apply(&self, y: &[Complex64], out: &mut [Complex64]) {
        let d = self.diag.len();
        for i in 0..d {
            let mut v = self.diag[i] * y[i];
            if i + 1 < d {
                v += y[i + 1] * self.upper[i];
            }
            if i > 0 {
                v += y[i - 1] * self.lower[i - 1];
            }
            out[i] = v;
        }
    }
}

#[derive(Debug, Clone)]
enum BlockMap {
    Dense(DMatrix<Complex64>),
    Ode(BlockGenerator),
}

/// How blocks are propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagationMethod {
    /// Dense exponential for blocks up to [`DENSE_BLOCK_LIMIT`], adaptive
    /// Runge-Kutta above.
    Auto,
    /// Adaptive Runge-Kutta for every block.
    Adaptive,
}

/// Propagator for a fixed time step and fixed parameters, reusable across states.
#[derive(Debug, Clone)]
pub struct BlockPropagator {
    n_spins: usize,
    time: f64,
    /// Maps for labels with `t2 >= t3`, in the order of `labels`.
    maps: Vec<BlockMap>,
    labels: Vec<(usize, usize)>,
    tolerance: Tolerance,
}

impl BlockPropagator {
    pub fn new(
        ising: &IsingParams,
        field: &EffectiveField,
        rates: &DecoherenceRates,
        time: f64,
    ) -> Result<Self> {
        Self::with_method(ising, field, rates, time, PropagationMethod::Auto)
    }

    pub fn with_method(
        ising: &IsingParams,
        field: &EffectiveField,
        rates: &DecoherenceRates,
        time: f64,
        method: PropagationMethod,
    ) -> Result<Self> {
        rates.validate()?;
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::InvalidParameter(format!("propagation time {time} must be >= 0")));
        }
        if !field.b.is_finite() {
            return Err(Error::InvalidParameter("field must be finite".into()));
        }
        let n = ising.n_spins;
        let labels: Vec<(usize, usize)> = SymmetricDensityState::block_labels(n)
            .filter(|(a, b)| a >= b)
            .collect();
        let build = |&(t2, t3): &(usize, usize)| -> BlockMap {
            let g = BlockGenerator::new(n, t2, t3, ising, field, rates);
            let d = g.diag.len();
            if method == PropagationMethod::Auto && d <= DENSE_BLOCK_LIMIT {
                BlockMap::Dense((g.dense() * Complex64::new(time, 0.0)).exp())
            } else {
                BlockMap::Ode(g)
            }
        };
        let maps: Vec<BlockMap> = if n >= 24 {
            labels.par_iter().map(build).collect()
        } else {
            labels.iter().map(build).collect()
        };
        Ok(Self {
            n_spins: n,
            time,
            maps,
            labels,
            tolerance: Tolerance::default(),
        })
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn apply(&self, state: &SymmetricDensityState) -> Result<SymmetricDensityState> {
        if state.n_spins != self.n_spins {
            return Err(Error::DimensionMismatch {
                left: state.n_spins,
                right: self.n_spins,
            });
        }
        let results: Vec<Result<Vec<Complex64>>> = self
            .labels
            .iter()
            .zip(&self.maps)
            .map(|(&(t2, t3), map)| {
                let y = state.block(t2, t3);
                match map {
                    BlockMap::Dense(u) => Ok((0..y.len())
                        .map(|r| (0..y.len()).map(|c| u[(r, c)] * y[c]).sum())
                        .collect()),
                    BlockMap::Ode(g) => {
                        if self.time == 0.0 || y.iter().all(|v| *v == ZERO) {
                            return Ok(y.to_vec());
                        }
                        let tol = Tolerance {
                            abs: self.tolerance.abs.min(1e-14),
                            ..self.tolerance
                        };
                        dopri5(|_, y, dy| g.apply(y, dy), 0.0, self.time, y, tol)
                    }
                }
            })
            .collect();
        let mut out = SymmetricDensityState::zeros(self.n_spins);
        for (&(t2, t3), r) in self.labels.iter().zip(results) {
            let v = r?;
            out.block_mut(t2, t3).copy_from_slice(&v);
            if t2 != t3 {
                for (dst, src) in out.block_mut(t3, t2).iter_mut().zip(&v) {
                    *dst = src.conj();
                }
            }
        }
        Ok(out)
    }
}

/// Propagates a state for time `t` under the Ising model, the field and the
/// local dissipators.
pub fn propagate(
    state: &SymmetricDensityState,
    ising: &IsingParams,
    field: &EffectiveField,
    rates: &DecoherenceRates,
    t: f64,
) -> Result<SymmetricDensityState> {
    if state.n_spins != ising.n_spins {
        return Err(Error::DimensionMismatch {
            left: state.n_spins,
            right: ising.n_spins,
        });
    }
    BlockPropagator::new(ising, field, rates, t)?.apply(state)
}

/// Collective rotation superoperator `rho -> R rho R^dagger`, prepared once
/// per angle and applied to many states.
#[derive(Debug, Clone)]
pub struct SuperRotation {
    n_spins: usize,
    /// `mats[p]` is the rotation of `p` spins, indexed by number of up spins.
    mats: Vec<DMatrix<Complex64>>,
    /// Pure spin flip about x (phi = pi): handled by permuting tuples.
    x_flip: bool,
}

impl SuperRotation {
    pub fn new(n_spins: usize, axis: Axis, phi: f64) -> Self {
        let x_flip = axis == Axis::X && (phi - std::f64::consts::PI).abs() < 1e-15;
        if x_flip {
            return Self {
                n_spins,
                mats: Vec::new(),
                x_flip,
            };
        }
        let mats: Vec<DMatrix<Complex64>> = match axis {
            Axis::Z => (0..=n_spins)
                .map(|p| {
                    DMatrix::from_fn(p + 1, p + 1, |r, c| {
                        if r == c {
                            // ups index: M = a - p/2
                            Complex64::from_polar(1.0, -phi * (r as f64 - p as f64 / 2.0))
                        } else {
                            ZERO
                        }
                    })
                })
                .collect(),
            Axis::Y | Axis::X => small_d_family(n_spins, phi)
                .into_iter()
                .enumerate()
                .map(|(p, d)| {
                    DMatrix::from_fn(p + 1, p + 1, |r, c| {
                        // k = p - a
                        let (kr, kc) = (p - r, p - c);
                        let v = d[(kr, kc)];
                        if axis == Axis::X {
                            i_pow(kc as i64 - kr as i64) * v
                        } else {
                            Complex64::new(v, 0.0)
                        }
                    })
                })
                .collect(),
        };
        Self {
            n_spins,
            mats,
            x_flip,
        }
    }

    pub fn apply(&self, state: &SymmetricDensityState) -> SymmetricDensityState {
        assert_eq!(state.n_spins, self.n_spins);
        if self.x_flip {
            return flip_x(state);
        }
        let n = self.n_spins;
        let mut mid = SymmetricDensityState::zeros(n);
        // ket side: fix bra up count p = t1 + t3; array over (t1, t2)
        for p in 0..=n {
            let dp = &self.mats[p];
            let dq = &self.mats[n - p];
            let mut arr = DMatrix::from_element(p + 1, n - p + 1, ZERO);
            for t1 in 0..=p {
                for t2 in 0..=(n - p) {
                    arr[(t1, t2)] = state.coefficient(t1, t2, p - t1);
                }
            }
            let rotated = dp * arr * dq.transpose();
            for t1 in 0..=p {
                for t2 in 0..=(n - p) {
                    mid.set_coefficient(t1, t2, p - t1, rotated[(t1, t2)]);
                }
            }
        }
        let mut out = SymmetricDensityState::zeros(n);
        // bra side: fix ket up count q = t1 + t2; array over (t1, t3)
        for q in 0..=n {
            let dp = self.mats[q].map(|z| z.conj());
            let dq = self.mats[n - q].map(|z| z.conj());
            let mut arr = DMatrix::from_element(q + 1, n - q + 1, ZERO);
            for t1 in 0..=q {
                for t3 in 0..=(n - q) {
                    arr[(t1, t3)] = mid.coefficient(t1, q - t1, t3);
                }
            }
            let rotated = dp * arr * dq.transpose();
            for t1 in 0..=q {
                for t3 in 0..=(n - q) {
                    out.set_coefficient(t1, q - t1, t3, rotated[(t1, t3)]);
                }
            }
        }
        out
    }
}

/// `sigma_x^N rho sigma_x^N`: swaps up and down on both sides.
fn flip_x(state: &SymmetricDensityState) -> SymmetricDensityState {
    let n = state.n_spins;
    let mut out = SymmetricDensityState::zeros(n);
    for (t2, t3) in SymmetricDensityState::block_labels(n) {
        let src = state.block(t2, t3);
        let dst = out.block_mut(t3, t2);
        let len = src.len();
        for (t1, v) in src.iter().enumerate() {
            dst[len - 1 - t1] = *v;
        }
    }
    out
}

/// `R rho R^dagger` with `R = exp(-i phi S_axis)`.
pub fn rotate_superop(state: &SymmetricDensityState, axis: Axis, phi: f64) -> SymmetricDensityState {
    SuperRotation::new(state.n_spins, axis, phi).apply(state)
}

/// Output of an echo sweep on mixed states.
#[derive(Debug, Clone)]
pub struct DecoherentEcho {
    /// `(phi, F_phi)`.
    pub fidelity: Vec<(f64, f64)>,
    /// `(phi, (2/N) <S_x>)`.
    pub magnetization: Vec<(f64, f64)>,
    /// `None` when the angle grid is too coarse to resolve all orders.
    pub spectrum: Option<MqcSpectrum>,
    /// `tr(rho^2)` after the forward arm.
    pub purity: f64,
    pub warnings: Vec<String>,
}

/// Applies the uniform-field evolution `exp(-i 2 b t S_z)` in superoperator form.
/// The field commutes with the Ising term and with every local dissipator, so
/// it can be split off the propagators exactly.
pub fn apply_field_phase(state: &mut SymmetricDensityState, b: f64, t: f64) {
    if b == 0.0 || t == 0.0 {
        return;
    }
    for (t2, t3) in SymmetricDensityState::block_labels(state.n_spins).collect::<Vec<_>>() {
        let ph = Complex64::from_polar(1.0, -2.0 * b * t * (t2 as f64 - t3 as f64));
        for v in state.block_mut(t2, t3) {
            *v *= ph;
        }
    }
}

/// Field-free propagators for both arms, shared by every field value.
struct EchoPropagators {
    fwd: BlockPropagator,
    bwd: BlockPropagator,
    echo: Option<SuperRotation>,
    step: f64,
}

impl EchoPropagators {
    fn new(seq: &EchoSequence, rates: &DecoherenceRates) -> Result<Self> {
        let ising = seq.ising();
        let step = if seq.mid_arm_echo {
            seq.arm_time / 2.0
        } else {
            seq.arm_time
        };
        let zero = EffectiveField::default();
        Ok(Self {
            fwd: BlockPropagator::new(&ising, &zero, rates, step)?,
            bwd: BlockPropagator::new(&ising.reversed(), &zero, rates, step)?,
            echo: seq
                .mid_arm_echo
                .then(|| SuperRotation::new(seq.n_spins, seq.echo_axis, std::f64::consts::PI)),
            step,
        })
    }

    /// One arm; with a mid-arm pulse the propagator covers half the arm.
    fn arm(&self, state: &SymmetricDensityState, prop: &BlockPropagator, b: f64) -> Result<SymmetricDensityState> {
        let mut out = prop.apply(state)?;
        apply_field_phase(&mut out, b, self.step);
        if let Some(r) = &self.echo {
            out = prop.apply(&r.apply(&out))?;
            apply_field_phase(&mut out, b, self.step);
        }
        Ok(out)
    }
}

/// Runs the echo sequence on the symmetric density matrix for every angle.
pub fn mqc_with_decoherence(
    seq: &EchoSequence,
    rates: &DecoherenceRates,
    field: &EffectiveField,
) -> Result<DecoherentEcho> {
    let props = EchoPropagators::new(seq, rates)?;
    let samples = echo_samples(seq, &props, field.b)?;
    finish_echo(seq, rates, field, samples)
}

/// Same as [`mqc_with_decoherence`] with a static Gaussian field of standard
/// deviation `sigma_b` around `field`, averaged by Gauss-Hermite quadrature.
pub fn mqc_with_field_noise(
    seq: &EchoSequence,
    rates: &DecoherenceRates,
    field: &EffectiveField,
    sigma_b: f64,
    nodes: usize,
) -> Result<DecoherentEcho> {
    if sigma_b == 0.0 || nodes <= 1 {
        return mqc_with_decoherence(seq, rates, field);
    }
    let props = EchoPropagators::new(seq, rates)?;
    let rule = gauss_hermite_normal(nodes);
    let k = seq.phi_grid.len();
    let mut acc = EchoSamples {
        fidelity: vec![0.0; k],
        magnetization: vec![0.0; k],
        purity: 0.0,
        trace_error: 0.0,
    };
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        let s = echo_samples(seq, &props, field.b + sigma_b * x)?;
        for i in 0..k {
            acc.fidelity[i] += w * s.fidelity[i];
            acc.magnetization[i] += w * s.magnetization[i];
        }
        acc.purity += w * s.purity;
        acc.trace_error = acc.trace_error.max(s.trace_error);
    }
    finish_echo(seq, rates, field, acc)
}

struct EchoSamples {
    fidelity: Vec<f64>,
    magnetization: Vec<f64>,
    purity: f64,
    trace_error: f64,
}

fn echo_samples(seq: &EchoSequence, props: &EchoPropagators, b: f64) -> Result<EchoSamples> {
    let n = seq.n_spins;
    let rho0 = SymmetricDensityState::embed_pure(&DickeVector::plus_state(n, Basis::Z)?);
    let rho1 = props.arm(&rho0, &props.fwd, b)?;
    let purity = rho1.purity();
    let per_phi = |&phi: &f64| -> Result<(f64, f64, f64)> {
        let rotated = rotate_superop(&rho1, seq.rotation_axis, phi);
        let fin = props.arm(&rotated, &props.bwd, b)?;
        Ok((
            fin.fidelity_plus(),
            2.0 / n as f64 * fin.expectation_sx(),
            (fin.trace() - 1.0).abs(),
        ))
    };
    let rows: Vec<(f64, f64, f64)> = if n >= 16 {
        seq.phi_grid.par_iter().map(per_phi).collect::<Result<_>>()?
    } else {
        seq.phi_grid.iter().map(per_phi).collect::<Result<_>>()?
    };
    Ok(EchoSamples {
        fidelity: rows.iter().map(|r| r.0).collect(),
        magnetization: rows.iter().map(|r| r.1).collect(),
        purity,
        trace_error: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

/// Trace drift above which a warning is attached to the result.
pub const TRACE_WARNING: f64 = 1e-8;

fn finish_echo(
    seq: &EchoSequence,
    rates: &DecoherenceRates,
    field: &EffectiveField,
    s: EchoSamples,
) -> Result<DecoherentEcho> {
    let mut warnings = Vec::new();
    if !rates.is_balanced() {
        warnings.push(format!(
            "gamma_ud ({}) != gamma_du ({}): Fourier components of F are not exactly tr(rho_m rho_-m)",
            rates.gamma_ud, rates.gamma_du
        ));
    }
    if field.b != 0.0 && !seq.mid_arm_echo {
        warnings.push("static field without mid-arm echo: F_0 differs from the purity".into());
    }
    if s.trace_error > TRACE_WARNING {
        warnings.push(format!("trace drift {:.1e} in the final states", s.trace_error));
    }
    for w in &warnings {
        log::debug!("{w}");
    }
    let fidelity: Vec<(f64, f64)> = seq.phi_grid.iter().copied().zip(s.fidelity).collect();
    let magnetization: Vec<(f64, f64)> = seq.phi_grid.iter().copied().zip(s.magnetization).collect();
    let spectrum = match seq.check_spectral_grid() {
        Ok(()) => Some(mqc_spectrum(&fidelity, seq.n_spins, seq.arm_time)?),
        Err(_) => None,
    };
    Ok(DecoherentEcho {
        fidelity,
        magnetization,
        spectrum,
        purity: s.purity,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mixed(n: usize, seed: u64) -> SymmetricDensityState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SymmetricDensityState::zeros(n);
        for w in [0.5, 0.3, 0.2] {
            let psi = DickeVector::random(n, Basis::Z, &mut rng).unwrap();
            out.add_scaled(w, &SymmetricDensityState::embed_pure(&psi)).unwrap();
        }
        out
    }

    #[test]
    fn offsets_tile_storage() {
        for n in [0, 1, 2, 5, 9] {
            let mut expected = 0;
            for (t2, t3) in SymmetricDensityState::block_labels(n) {
                assert_eq!(block_offset(n, t2, t3), expected);
                expected += n - t2 - t3 + 1;
            }
            assert_eq!(expected, liouville_dim(n));
        }
    }

    #[test]
    fn pure_embedding_observables() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = DickeVector::random(7, Basis::Z, &mut rng).unwrap();
        let rho = SymmetricDensityState::embed_pure(&psi);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
        assert!((rho.purity() - 1.0).abs() < 1e-12);
        assert!((rho.expectation_sx() - crate::collective::expectation_sx(&psi)).abs() < 1e-12);
        assert!((rho.expectation_sz() - crate::collective::expectation_sz(&psi)).abs() < 1e-12);
        assert!(rho.hermiticity_error() < 1e-14);
    }

    #[test]
    fn maximally_mixed_purity() {
        let rho = SymmetricDensityState::maximally_mixed(2);
        assert!((rho.purity() - 0.25).abs() < 1e-14);
        assert!((rho.trace() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_spin_dephasing() {
        let plus = DickeVector::plus_state(1, Basis::Z).unwrap();
        let rho = SymmetricDensityState::embed_pure(&plus);
        let rates = DecoherenceRates::new(0.0, 0.0, 40.0, 0.0).unwrap();
        let ising = IsingParams::new(0.0, 1).unwrap();
        for method in [PropagationMethod::Auto, PropagationMethod::Adaptive] {
            let p = BlockPropagator::with_method(&ising, &EffectiveField::default(), &rates, 0.03, method)
                .unwrap();
            let out = p.apply(&rho).unwrap();
            let want = 0.5 * (-40.0f64 * 0.03 / 2.0).exp();
            assert!((out.expectation_sx() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_and_adaptive_agree() {
        let rho = random_mixed(6, 4);
        let rates = DecoherenceRates::new(14.0, 10.0, 91.0, 0.0).unwrap();
        let ising = IsingParams::new(300.0, 6).unwrap();
        let field = EffectiveField { b: 20.0 };
        let a = BlockPropagator::with_method(&ising, &field, &rates, 2e-3, PropagationMethod::Auto)
            .unwrap()
            .apply(&rho)
            .unwrap();
        let b = BlockPropagator::with_method(&ising, &field, &rates, 2e-3, PropagationMethod::Adaptive)
            .unwrap()
            .with_tolerance(Tolerance {
                rel: 1e-11,
                abs: 1e-14,
                ..Default::default()
            })
            .apply(&rho)
            .unwrap();
        let err = a.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn trace_and_hermiticity_preserved() {
        let rho = random_mixed(8, 2);
        let rates = DecoherenceRates::new(140.0, 30.0, 91.0, 9.0).unwrap();
        let ising = IsingParams::new(500.0, 8).unwrap();
        let out = propagate(&rho, &ising, &EffectiveField { b: 5.0 }, &rates, 5e-3).unwrap();
        assert!((out.trace() - 1.0).abs() < 1e-10);
        assert!(out.hermiticity_error() < 1e-12);
        assert!(out.purity() < rho.purity());
    }

    #[test]
    fn rotation_preserves_trace_and_purity() {
        let rho = random_mixed(9, 7);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let r = rotate_superop(&rho, axis, 0.77);
            assert!((r.trace() - 1.0).abs() < 1e-12);
            assert!((r.purity() - rho.purity()).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_matches_pure_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let psi = DickeVector::random(6, Basis::Z, &mut rng).unwrap();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let a = rotate_superop(&SymmetricDensityState::embed_pure(&psi), axis, 1.1);
            let b = SymmetricDensityState::embed_pure(&crate::collective::rotate_collective(&psi, axis, 1.1));
            let err = a.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{axis:?}: {err}");
        }
        let flip = rotate_superop(&SymmetricDensityState::embed_pure(&psi), Axis::X, std::f64::consts::PI);
        let b = SymmetricDensityState::embed_pure(&crate::collective::rotate_collective(
            &psi,
            Axis::X,
            std::f64::consts::PI,
        ));
        let err = flip.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn z_coherence_conserved_with_unbalanced_rates() {
        let rho = SymmetricDensityState::embed_pure(&DickeVector::dicke(5, 2, Basis::Z).unwrap());
        let rates = DecoherenceRates::new(50.0, 5.0, 10.0, 0.0).unwrap();
        let ising = IsingParams::new(100.0, 5).unwrap();
        let out = propagate(&rho, &ising, &EffectiveField::default(), &rates, 0.01).unwrap();
        let w = out.z_coherence_weights();
        for (i, v) in w.iter().enumerate() {
            if i != 5 {
                assert!(*v <= 1e-24);
            }
        }
    }

    #[test]
    fn dense_round_trip() {
        let rho = random_mixed(4, 3);
        let back = SymmetricDensityState::from_dense(&rho.to_dense().unwrap()).unwrap();
        let err = rho.raw().iter().zip(back.raw()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(err < 1e-14);
    }

    #[test]
    fn no_decoherence_reduces_to_pure_sweep() {
        let seq = EchoSequence::new(5, 2.0, 0.3).unwrap();
        let mixed = mqc_with_decoherence(&seq, &DecoherenceRates::none(), &EffectiveField::default()).unwrap();
        let pure = crate::protocol::run_echo(&seq).unwrap();
        for (i, (_, f)) in mixed.fidelity.iter().enumerate() {
            assert!((f - pure.fidelity[i]).abs() < 1e-10);
            assert!((mixed.magnetization[i].1 - pure.magnetization[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn sum_rule_with_balanced_rates() {
        let seq = EchoSequence::new(6, 150.0, 4e-3).unwrap();
        let rates = DecoherenceRates::new(12.0, 12.0, 91.0, 0.0).unwrap();
        let r = mqc_with_decoherence(&seq, &rates, &EffectiveField::default()).unwrap();
        assert!(r.warnings.is_empty());
        assert!((r.fidelity[0].1 - r.purity).abs() < 1e-9);
        assert!((r.spectrum.unwrap().total() - r.purity).abs() < 1e-9);
    }

    #[test]
    fn field_phase_matches_field_in_generator() {
        let n = 5;
        let ising = IsingParams::new(40.0, n).unwrap();
        let rates = DecoherenceRates::new(14.0, 10.0, 91.0, 9.0).unwrap();
        let field = EffectiveField { b: 37.0 };
        let rho = random_mixed(n, 4);
        let with = BlockPropagator::new(&ising, &field, &rates, 3e-3).unwrap().apply(&rho).unwrap();
        let mut split = BlockPropagator::new(&ising, &EffectiveField::default(), &rates, 3e-3)
            .unwrap()
            .apply(&rho)
            .unwrap();
        apply_field_phase(&mut split, field.b, 3e-3);
        for (a, b) in with.raw().iter().zip(split.raw()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
