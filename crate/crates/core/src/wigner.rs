//! Wigner d-matrices for collective spin rotations.
//!
//! Rows and columns use the Dicke index `k = j - m`, so `k = 0` is the
//! maximal projection. Entry `(k', k)` is `<j, j-k'| R |j, j-k>` with
//! `R = exp(-i phi J_y)` for [`RotationConvention::Zyz`] and
//! `R = exp(-i phi J_x)` for [`RotationConvention::Zxz`].
//!
//! Two constructions are provided. Small matrices are built from the
//! eigendecomposition of `J_x` (a real symmetric tridiagonal matrix); large
//! ones from a recursion that couples one spin-1/2 at a time. Neither
//! touches factorial ratios, which lose all precision near `2j ~ 100`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest `2j` for which [`wigner_d`] uses the eigendecomposition path.
pub const EIGEN_PATH_MAX_TWO_J: usize = 64;

/// Largest `2j` accepted by [`wigner_d`].
pub const MAX_TWO_J: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RotationConvention {
    /// Rotation about `y`; entries are real.
    Zyz,
    /// Rotation about `x`; entries are the `Zyz` entries times `i^(m' - m)`.
    Zxz,
}

#[derive(Debug, Clone)]
pub struct WignerDMatrix {
    two_j: usize,
    angle: f64,
    convention: RotationConvention,
    entries: DMatrix<Complex64>,
}

impl WignerDMatrix {
    pub fn two_j(&self) -> usize {
        self.two_j
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn convention(&self) -> RotationConvention {
        self.convention
    }

    pub fn dim(&self) -> usize {
        self.two_j + 1
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[(row, col)]
    }

    /// Largest deviation of `D^dagger D` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let prod = self.entries.adjoint() * &self.entries;
        let n = self.dim();
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((prod[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        err
    }

    /// Applies the matrix to an amplitude vector.
    pub fn apply(&self, amps: &[Complex64]) -> Vec<Complex64> {
        let n = self.dim();
        assert_eq!(amps.len(), n);
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, a) in amps.iter().enumerate() {
                acc += self.entries[(r, c)] * a;
            }
            *o = acc;
        }
        out
    }
}

/// Builds the rotation matrix of spin `two_j / 2` by `angle`.
pub fn wigner_d(two_j: usize, angle: f64, convention: RotationConvention) -> Result<WignerDMatrix> {
    if two_j > MAX_TWO_J {
        return Err(Error::InvalidParameter(format!(
            "two_j = {two_j} exceeds supported maximum {MAX_TWO_J}"
        )));
    }
    let real = if two_j <= EIGEN_PATH_MAX_TWO_J {
        small_d_eigen(two_j, angle)
    } else {
        small_d_recursive(two_j, angle)
    };
    Ok(from_real(real, two_j, angle, convention))
}

/// Forces the eigendecomposition construction (any size).
pub fn wigner_d_eigen(two_j: usize, angle: f64, convention: RotationConvention) -> WignerDMatrix {
    from_real(small_d_eigen(two_j, angle), two_j, angle, convention)
}

/// Forces the spin-1/2 coupling recursion (any size).
pub fn wigner_d_recursive(
    two_j: usize,
    angle: f64,
    convention: RotationConvention,
) -> WignerDMatrix {
    from_real(small_d_recursive(two_j, angle), two_j, angle, convention)
}

fn from_real(
    real: DMatrix<f64>,
    two_j: usize,
    angle: f64,
    convention: RotationConvention,
) -> WignerDMatrix {
    let entries = match convention {
        RotationConvention::Zyz => real.map(|v| Complex64::new(v, 0.0)),
        RotationConvention::Zxz => DMatrix::from_fn(two_j + 1, two_j + 1, |r, c| {
            // m' - m = k - k'
            real[(r, c)] * i_pow(c as i64 - r as i64)
        }),
    };
    WignerDMatrix {
        two_j,
        angle,
        convention,
        entries,
    }
}

/// `i^p` for integer `p`.
pub fn i_pow(p: i64) -> Complex64 {
    match p.rem_euclid(4) {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Real small-d matrix `d^j(angle)` in Dicke index order via
/// `exp(-i a J_y) = U exp(-i a J_x) U^dagger`, `U = exp(-i pi/2 J_z)`.
pub fn small_d_eigen(two_j: usize, angle: f64) -> DMatrix<f64> {
    let n = two_j + 1;
    let j = two_j as f64 / 2.0;
    let proj = |k: usize| j - k as f64;
    let jx = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            // <m'|J_x|m> with |m' - m| = 1
            let (mr, mc) = (proj(r), proj(c));
            let lo = mr.min(mc);
            0.5 * (j * (j + 1.0) - lo * (lo + 1.0)).max(0.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jx);
    let vecs = &eig.eigenvectors;
    let phases: Vec<Complex64> = eig
        .eigenvalues
        .iter()
        .map(|&lam| Complex64::from_polar(1.0, -angle * lam))
        .collect();
    DMatrix::from_fn(n, n, |r, c| {
        let mut acc = Complex64::new(0.0, 0.0);
        for (l, ph) in phases.iter().enumerate() {
            acc += ph * (vecs[(r, l)] * vecs[(c, l)]);
        }
        let (mr, mc) = (proj(r), proj(c));
        let z = Complex64::from_polar(1.0, -std::f64::consts::FRAC_PI_2 * (mr - mc)) * acc;
        z.re
    })
}

/// Real small-d matrix built by adding one spin-1/2 at a time.
pub fn small_d_recursive(two_j: usize, angle: f64) -> DMatrix<f64> {
    let mut ladder = SmallDLadder::new(angle);
    while ladder.two_j() < two_j {
        ladder.step();
    }
    ladder.to_matrix()
}

/// All small-d matrices `d^{n/2}(angle)` for `n = 0..=max_two_j`, generated
/// by the same recursion. Used where rotations act on many spin sizes at once.
pub fn small_d_family(max_two_j: usize, angle: f64) -> Vec<DMatrix<f64>> {
    let mut ladder = SmallDLadder::new(angle);
    let mut out = Vec::with_capacity(max_two_j + 1);
    out.push(ladder.to_matrix());
    while ladder.two_j() < max_two_j {
        ladder.step();
        out.push(ladder.to_matrix());
    }
    out
}

/// Recursion state. Internally indexed by the number of up spins
/// `a = n - k`; `d[a' * (n+1) + a]`.
struct SmallDLadder {
    n: usize,
    c: f64,
    s: f64,
    d: Vec<f64>,
}

impl SmallDLadder {
    fn new(angle: f64) -> Self {
        Self {
            n: 0,
            c: (angle / 2.0).cos(),
            s: (angle / 2.0).sin(),
            d: vec![1.0],
        }
    }

    fn two_j(&self) -> usize {
        self.n
    }

    fn step(&mut self) {
        // |a>_{n+1} = sqrt(a/(n+1)) |a-1>_n |up> + sqrt((n+1-a)/(n+1)) |a>_n |down>;
        // both row and column are expanded, so every weight is at most one
        let n = self.n;
        let m = n + 1;
        let mf = m as f64;
        let (c, s) = (self.c, self.s);
        let half = [[c, -s], [s, c]];
        let old = &self.d;
        let mut next = vec![0.0f64; (m + 1) * (m + 1)];
        for ap in 0..=m {
            let row_terms = [
                (ap >= 1, ap.wrapping_sub(1), (ap as f64 / mf).sqrt()),
                (ap <= n, ap, ((m - ap) as f64 / mf).sqrt()),
            ];
            for a in 0..=m {
                let col_terms = [
                    (a >= 1, a.wrapping_sub(1), (a as f64 / mf).sqrt()),
                    (a <= n, a, ((m - a) as f64 / mf).sqrt()),
                ];
                let mut v = 0.0;
                for (ur, &(ok_r, pr, wr)) in row_terms.iter().enumerate() {
                    if !ok_r {
                        continue;
                    }
                    for (uc, &(ok_c, pc, wc)) in col_terms.iter().enumerate() {
                        if ok_c {
                            v += wr * wc * half[ur][uc] * old[pr * (n + 1) + pc];
                        }
                    }
                }
                next[ap * (m + 1) + a] = v;
            }
        }
        self.d = next;
        self.n = m;
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        // Dicke index k = n - a
        DMatrix::from_fn(n + 1, n + 1, |kr, kc| self.d[(n - kr) * (n + 1) + (n - kc)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_angle_is_identity() {
        for two_j in [0, 1, 5, 30, 100] {
            let d = wigner_d(two_j, 0.0, RotationConvention::Zyz).unwrap();
            for r in 0..=two_j {
                for c in 0..=two_j {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((d.get(r, c).re - want).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn spin_half_closed_form() {
        let phi: f64 = 0.83;
        let (c, s) = ((phi / 2.0).cos(), (phi / 2.0).sin());
        for d in [
            wigner_d_eigen(1, phi, RotationConvention::Zyz),
            wigner_d_recursive(1, phi, RotationConvention::Zyz),
        ] {
            assert!((d.get(0, 0).re - c).abs() < 1e-14);
            assert!((d.get(0, 1).re + s).abs() < 1e-14);
            assert!((d.get(1, 0).re - s).abs() < 1e-14);
            assert!((d.get(1, 1).re - c).abs() < 1e-14);
        }
        let dx = wigner_d(1, phi, RotationConvention::Zxz).unwrap();
        // exp(-i phi sigma_x / 2)
        assert!((dx.get(0, 1) - Complex64::new(0.0, -s)).norm() < 1e-14);
        assert!((dx.get(1, 0) - Complex64::new(0.0, -s)).norm() < 1e-14);
    }

    #[test]
    fn paths_agree_up_to_64() {
        for two_j in [2, 7, 16, 33, 64] {
            for &phi in &[0.3, 1.9, PI, -2.2] {
                let a = small_d_eigen(two_j, phi);
                let b = small_d_recursive(two_j, phi);
                let err = (a - b).abs().max();
                assert!(err < 1e-11, "two_j={two_j} phi={phi} err={err}");
            }
        }
    }

    #[test]
    fn unitarity_large_spin() {
        for two_j in [65, 128, 222, 256] {
            let d = wigner_d(two_j, 1.234, RotationConvention::Zxz).unwrap();
            assert!(d.unitarity_error() < 1e-10, "two_j={two_j}");
        }
    }

    #[test]
    fn matches_dense_exponential_spin4() {
        // exp(-i phi J_y) with J_y = (J_+ - J_-)/(2i), from the generator directly
        let two_j = 8;
        let n = two_j + 1;
        let j = two_j as f64 / 2.0;
        let mut gen = DMatrix::<Complex64>::zeros(n, n);
        for k in 1..n {
            let m = j - k as f64;
            let up = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            // <m+1|J_y|m> = up / (2i)
            gen[(k - 1, k)] = Complex64::new(0.0, -0.5 * up);
            gen[(k, k - 1)] = Complex64::new(0.0, 0.5 * up);
        }
        let u = (gen * Complex64::new(0.0, -0.7)).exp();
        let d = wigner_d(two_j, 0.7, RotationConvention::Zyz).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert!((u[(r, c)] - d.get(r, c)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn family_matches_single() {
        let fam = small_d_family(12, 0.77);
        assert_eq!(fam.len(), 13);
        let d = small_d_recursive(9, 0.77);
        assert!((&fam[9] - d).abs().max() < 1e-15);
    }

    #[test]
    fn half_pi_rotation_of_top_state_is_binomial() {
        // |j, j> rotated by pi/2 about y: amplitudes sqrt(C(n,k)) / 2^(n/2)
        let n = 10;
        let d = small_d_recursive(n, PI / 2.0);
        let t = crate::binom::LogBinomTable::new(n);
        for k in 0..=n {
            let want = (0.5 * t.ln_choose(n, k) - 0.5 * n as f64 * 2f64.ln()).exp();
            assert!((d[(k, 0)] - want).abs() < 1e-13);
        }
    }
}
