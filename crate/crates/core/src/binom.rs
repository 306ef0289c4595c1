//! Log-domain binomial coefficients.
//!
//! `C(111, 55)` is ~6e31 and products of several such factors overflow
//! double precision, so every combinatorial weight in the crate is carried
//! as a logarithm until the final exponentiation.

/// Table of `ln C(n, k)` for `0 <= k <= n <= max_n`.
#[derive(Debug, Clone)]
pub struct LogBinomTable {
    max_n: usize,
    ln_fact: Vec<f64>,
}

impl LogBinomTable {
    pub fn new(max_n: usize) -> Self {
        let mut ln_fact = Vec::with_capacity(max_n + 1);
        ln_fact.push(0.0);
        // compensated running sum of ln(i)
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for i in 1..=max_n {
            let y = (i as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            ln_fact.push(sum);
        }
        Self { max_n, ln_fact }
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.ln_fact[n]
    }

    /// `ln C(n, k)`; `-inf` when `k > n`.
    pub fn ln_choose(&self, n: usize, k: usize) -> f64 {
        assert!(n <= self.max_n, "n = {n} exceeds table size {}", self.max_n);
        if k > n {
            return f64::NEG_INFINITY;
        }
        if k == 0 || k == n {
            return 0.0;
        }
        self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k]
    }

    pub fn choose(&self, n: usize, k: usize) -> f64 {
        self.ln_choose(n, k).exp()
    }

    /// `ln (n! / (k_1! k_2! ...))` with `n = sum k_i`.
    pub fn ln_multinomial(&self, parts: &[usize]) -> f64 {
        let n: usize = parts.iter().sum();
        parts
            .iter()
            .fold(self.ln_fact[n], |acc, &k| acc - self.ln_fact[k])
    }
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_are_one() {
        let t = LogBinomTable::new(200);
        for n in 0..=200 {
            assert_eq!(t.ln_choose(n, 0).exp(), 1.0);
            assert_eq!(t.ln_choose(n, n).exp(), 1.0);
        }
        assert_eq!(t.ln_choose(3, 4), f64::NEG_INFINITY);
    }

    #[test]
    fn pascal_identity_in_log_domain() {
        let t = LogBinomTable::new(300);
        for n in 2..=300 {
            for k in 1..n {
                let lhs = t.ln_choose(n, k);
                let rhs = log_add_exp(t.ln_choose(n - 1, k - 1), t.ln_choose(n - 1, k));
                let rel = ((lhs - rhs).exp() - 1.0).abs();
                assert!(rel < 1e-12, "n={n} k={k} rel={rel}");
            }
        }
    }

    #[test]
    fn small_values_exact() {
        let t = LogBinomTable::new(60);
        assert!((t.choose(10, 3) - 120.0).abs() < 1e-10);
        assert!((t.choose(48, 24) / 32_247_603_683_100.0 - 1.0).abs() < 1e-13);
        let m = t.ln_multinomial(&[2, 1, 1]).exp();
        assert!((m - 12.0).abs() < 1e-12);
    }

    #[test]
    fn large_n_stays_finite() {
        let t = LogBinomTable::new(1000);
        let v = t.ln_choose(1000, 500);
        assert!(v.is_finite() && v > 600.0);
    }
}
