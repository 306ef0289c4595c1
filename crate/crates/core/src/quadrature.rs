//! Numerical quadrature: Gauss rules from the Golub-Welsch eigenproblem and
//! adaptive Gauss-Kronrod integration.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Nodes and weights of a quadrature rule.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn golub_welsch(offdiag: &[f64], mu0: f64) -> Rule {
    let n = offdiag.len() + 1;
    let jac = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c {
            offdiag[r]
        } else if c + 1 == r {
            offdiag[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Hermite rule for the standard normal density: `E[f(Z)] ~ sum w_i f(x_i)`.
pub fn gauss_hermite_normal(n: usize) -> Rule {
    assert!(n >= 1);
    if n == 1 {
        return Rule {
            nodes: vec![0.0],
            weights: vec![1.0],
        };
    }
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut rule = golub_welsch(&off, 1.0);
    // symmetrize to remove eigensolver noise
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
        let w = 0.5 * (rule.weights[i] + rule.weights[j]);
        rule.nodes[i] = -x;
        rule.nodes[j] = x;
        rule.weights[i] = w;
        rule.weights[j] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    if n == 1 {
        return Rule {
            nodes: vec![0.0],
            weights: vec![2.0],
        };
    }
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&off, 2.0)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * K15_WEIGHTS[7];
    let mut gauss = fc * G7_WEIGHTS[3];
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kron += s * K15_WEIGHTS[i];
        if i % 2 == 1 {
            gauss += s * G7_WEIGHTS[i / 2];
        }
    }
    (kron * h, ((kron - gauss) * h).norm())
}

/// Adaptive Gauss-Kronrod integration of a complex-valued function.
pub fn integrate_complex<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Complex64> {
    if a == b {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let mut stack = vec![(a, b, 0usize)];
    let mut total = Complex64::new(0.0, 0.0);
    // estimate the scale for the relative criterion from a coarse pass
    let (coarse, _) = gk15(&mut f, a, b);
    let scale = coarse.norm();
    let max_depth = 50;
    let mut evaluations = 0usize;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(&mut f, lo, hi);
        evaluations += 1;
        let width_frac = (hi - lo) / (b - a);
        let tol = (abs_tol.max(rel_tol * scale)) * width_frac.abs();
        if err <= tol || depth >= max_depth {
            if depth >= max_depth && err > tol {
                return Err(Error::Convergence(format!(
                    "quadrature did not converge on [{lo}, {hi}]"
                )));
            }
            total += val;
        } else {
            if evaluations > 2_000_000 {
                return Err(Error::Convergence("quadrature evaluation budget exhausted".into()));
            }
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    Ok(total)
}

/// Adaptive Gauss-Kronrod integration of a real function.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, abs_tol, rel_tol).map(|z| z.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite_normal(21);
        let moment = |p: i32| -> f64 { r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(p)).sum() };
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(10) - 945.0).abs() < 1e-7);
    }

    #[test]
    fn legendre_exact_for_polynomials() {
        let r = gauss_legendre(6);
        let s: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-13);
    }

    #[test]
    fn adaptive_oscillatory() {
        let v = integrate(|x| (50.0 * x).cos(), 0.0, 3.0, 1e-13, 1e-12).unwrap();
        assert!((v - (150.0f64).sin() / 50.0).abs() < 1e-12);
        let z = integrate_complex(|x| Complex64::from_polar(1.0, 7.0 * x), 0.0, 1.0, 1e-14, 1e-13)
            .unwrap();
        let want = (Complex64::from_polar(1.0, 7.0) - 1.0) / Complex64::new(0.0, 7.0);
        assert!((z - want).norm() < 1e-13);
    }
}
