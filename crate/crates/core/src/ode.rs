//! Explicit Runge-Kutta integrators for complex linear and nonlinear systems.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerances for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-9,
            abs: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy_into(out: &mut [Complex64], y: &[Complex64], h: f64, terms: &[(f64, &[Complex64])]) {
    for i in 0..out.len() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, k) in terms {
            acc += k[i] * *c;
        }
        out[i] = y[i] + acc * h;
    }
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1` with adaptive
/// Dormand-Prince steps. `f` writes the derivative into its last argument.
pub fn dopri5<F>(mut f: F, t0: f64, t1: f64, y0: &[Complex64], tol: Tolerance) -> Result<Vec<Complex64>>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    if t1 == t0 || n == 0 {
        return Ok(y);
    }
    if t1 < t0 {
        return Err(Error::InvalidParameter("integration must run forward in time".into()));
    }
    let span = t1 - t0;
    let zero = Complex64::new(0.0, 0.0);
    let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![zero; n]).collect();
    let mut tmp = vec![zero; n];
    let mut y5 = vec![zero; n];

    f(t0, &y, &mut k[0]);
    // initial step from derivative scale
    let d0 = rms_scaled(&y, &y, tol);
    let d1 = rms_scaled(&k[0], &y, tol);
    let mut h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        (0.01 * d0 / d1).min(span)
    };
    h = h.max(span * 1e-12);

    let mut t = t0;
    let mut steps = 0usize;
    while t < t1 {
        if steps >= tol.max_steps {
            return Err(Error::Convergence(format!(
                "adaptive integrator exceeded {} steps at t = {t}",
                tol.max_steps
            )));
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        {
            let (k0, rest) = k.split_at_mut(1);
            axpy_into(&mut tmp, &y, h, &[(A21, &k0[0])]);
            f(t + C2 * h, &tmp, &mut rest[0]);
        }
        axpy_into(&mut tmp, &y, h, &[(A31, &k[0]), (A32, &k[1])]);
        f(t + C3 * h, &tmp, &mut k[2]);
        axpy_into(&mut tmp, &y, h, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]);
        f(t + C4 * h, &tmp, &mut k[3]);
        axpy_into(
            &mut tmp,
            &y,
            h,
            &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
        );
        f(t + C5 * h, &tmp, &mut k[4]);
        axpy_into(
            &mut tmp,
            &y,
            h,
            &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])],
        );
        f(t + h, &tmp, &mut k[5]);
        axpy_into(
            &mut y5,
            &y,
            h,
            &[(B1, &k[0]), (B3, &k[2]), (B4, &k[3]), (B5, &k[4]), (B6, &k[5])],
        );
        f(t + h, &y5, &mut k[6]);

        let mut err_sq = 0.0;
        for i in 0..n {
            let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * h;
            let sc = tol.abs + tol.rel * y[i].norm().max(y5[i].norm());
            err_sq += (e.norm() / sc).powi(2);
        }
        let err = (err_sq / n as f64).sqrt();
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            std::mem::swap(&mut y, &mut y5);
            // first-same-as-last
            let (k0, rest) = k.split_at_mut(6);
            k0[0].copy_from_slice(&rest[0]);
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            if !err.is_finite() {
                h *= 0.1;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h < span * 1e-15 {
                return Err(Error::Convergence(format!("step size underflow at t = {t}")));
            }
        }
    }
    Ok(y)
}

fn rms_scaled(v: &[Complex64], y: &[Complex64], tol: Tolerance) -> f64 {
    let n = v.len() as f64;
    (v.iter()
        .zip(y)
        .map(|(a, b)| (a.norm() / (tol.abs + tol.rel * b.norm())).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        * tol.rel
}

/// One classical fourth-order Runge-Kutta step of size `h`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &mut [Complex64], h: f64, scratch: &mut [Vec<Complex64>; 5])
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let [k1, k2, k3, k4, tmp] = scratch;
    f(t, y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + k1[i] * (0.5 * h);
    }
    f(t + 0.5 * h, tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + k2[i] * (0.5 * h);
    }
    f(t + 0.5 * h, tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + k3[i] * h;
    }
    f(t + h, tmp, k4);
    for i in 0..y.len() {
        y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0);
    }
}
