//! Photon-count statistics of the fluorescence readout and extraction of the
//! all-dark fraction.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, DiscreteCDF, Poisson as PoissonDist};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Detection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Background count rate (s^-1).
    pub gamma_d: f64,
    /// Count rate of one bright ion (s^-1).
    pub gamma_b: f64,
    /// Detection window (s).
    pub t_c: f64,
    /// Probability of one spin flip during detection.
    pub p_flip: f64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            gamma_d: 200.0,
            gamma_b: 4000.0,
            t_c: 5e-3,
            p_flip: 0.03,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d >= 0.0) || !(self.gamma_b >= 0.0) {
            return Err(Error::InvalidParameter("count rates must be >= 0".into()));
        }
        if !(self.t_c > 0.0) {
            return Err(Error::InvalidParameter("detection window must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_flip) {
            return Err(Error::InvalidParameter("p_flip must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn dark_mean(&self) -> f64 {
        self.gamma_d * self.t_c
    }

    /// Mean counts with `n_bright` bright ions.
    pub fn bright_mean(&self, n_bright: usize) -> f64 {
        (self.gamma_d + n_bright as f64 * self.gamma_b) * self.t_c
    }
}

/// Poisson probability, also for a zero mean.
pub fn poisson_pmf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    PoissonDist::new(mean).map(|d| d.pmf(k)).unwrap_or(0.0)
}

fn poisson_cdf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return 1.0;
    }
    PoissonDist::new(mean).map(|d| d.cdf(k)).unwrap_or(1.0)
}

/// Count distribution of the all-dark state with at most one spin flip at a
/// uniformly distributed time:
/// `(1 - p) P(G_d t_c, k) + p [Q(k+1, G_d t_c) - Q(k+1, (G_d + G_b) t_c)] / (G_b t_c)`.
pub fn count_distribution(p: &DetectionParams, k: u64) -> f64 {
    let a = p.dark_mean();
    let stay = (1.0 - p.p_flip) * poisson_pmf(a, k);
    if p.p_flip == 0.0 {
        return stay;
    }
    let flip = if p.gamma_b == 0.0 {
        poisson_pmf(a, k)
    } else {
        let b = p.bright_mean(1);
        let q = |x: f64| if x == 0.0 { 1.0 } else { gamma_ur(k as f64 + 1.0, x) };
        (q(a) - q(b)) / (p.gamma_b * p.t_c)
    };
    stay + p.p_flip * flip
}

/// Histogram of photon counts per trial.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountHistogram {
    bins: Vec<u64>,
}

impl CountHistogram {
    pub fn from_bins(bins: Vec<u64>) -> Self {
        Self { bins }
    }

    pub fn from_counts(counts: impl IntoIterator<Item = u64>) -> Self {
        let mut h = Self::default();
        for k in counts {
            h.push(k);
        }
        h
    }

    pub fn push(&mut self, k: u64) {
        let k = k as usize;
        if k >= self.bins.len() {
            self.bins.resize(k + 1, 0);
        }
        self.bins[k] += 1;
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn get(&self, k: usize) -> u64 {
        self.bins.get(k).copied().unwrap_or(0)
    }

    pub fn trials(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let t = self.trials();
        if t == 0 {
            return 0.0;
        }
        self.bins.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / t as f64
    }

    /// Trials with at most `threshold` counts.
    pub fn below(&self, threshold: usize) -> u64 {
        self.bins.iter().take(threshold + 1).sum()
    }

    /// Writes `# key=value` header lines followed by `k count` rows.
    pub fn write<W: Write>(&self, mut w: W, params: Option<&DetectionParams>) -> Result<()> {
        if let Some(p) = params {
            writeln!(w, "# gamma_d={}", p.gamma_d)?;
            writeln!(w, "# gamma_b={}", p.gamma_b)?;
            writeln!(w, "# t_c={}", p.t_c)?;
            writeln!(w, "# p_flip={}", p.p_flip)?;
        }
        writeln!(w, "# trials={}", self.trials())?;
        for (k, c) in self.bins.iter().enumerate() {
            writeln!(w, "{k} {c}")?;
        }
        Ok(())
    }

    /// Reads the format of [`CountHistogram::write`]. Detection parameters
    /// are returned when all four header keys are present.
    pub fn read<R: BufRead>(r: R) -> Result<(Self, Option<DetectionParams>)> {
        let mut h = Self::default();
        let mut keys: [Option<f64>; 4] = [None; 4];
        let mut declared = None;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let Some((key, value)) = rest.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                let parse = || -> Result<f64> {
                    value
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {}: bad value {value:?}", lineno + 1)))
                };
                match key.trim() {
                    "gamma_d" => keys[0] = Some(parse()?),
                    "gamma_b" => keys[1] = Some(parse()?),
                    "t_c" => keys[2] = Some(parse()?),
                    "p_flip" => keys[3] = Some(parse()?),
                    "trials" => declared = Some(parse()? as u64),
                    _ => {}
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(k), Some(c), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("line {}: expected `k count`", lineno + 1)));
            };
            let k: usize = k
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad bin {k:?}", lineno + 1)))?;
            let c: u64 = c
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad count {c:?}", lineno + 1)))?;
            if k >= h.bins.len() {
                h.bins.resize(k + 1, 0);
            }
            h.bins[k] += c;
        }
        if let Some(t) = declared {
            if t != h.trials() {
                return Err(Error::Parse(format!("header declares {t} trials, bins sum to {}", h.trials())));
            }
        }
        let params = match keys {
            [Some(gamma_d), Some(gamma_b), Some(t_c), Some(p_flip)] => {
                let p = DetectionParams {
                    gamma_d,
                    gamma_b,
                    t_c,
                    p_flip,
                };
                p.validate()?;
                Some(p)
            }
            _ => None,
        };
        Ok((h, params))
    }
}

/// Count model for trials that do not end in the all-dark state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightModel {
    /// Number of bright ions.
    pub n_bright: usize,
    /// Probability of a second flip in a dark trial (beyond the single-flip model).
    pub two_flip: f64,
}

impl Default for BrightModel {
    fn default() -> Self {
        Self {
            n_bright: 1,
            two_flip: 0.0,
        }
    }
}

fn draw_poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Draws one all-dark trial from the generative flip model.
fn draw_dark<R: Rng>(p: &DetectionParams, two_flip: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let flips = if u < two_flip {
        2
    } else if u < two_flip + p.p_flip {
        1
    } else {
        0
    };
    // bright time accumulated by ions that flipped at uniform times
    let bright_time: f64 = (0..flips).map(|_| p.t_c * (1.0 - rng.random::<f64>())).sum();
    draw_poisson(p.gamma_d * p.t_c + p.gamma_b * bright_time, rng)
}

/// Simulated histogram: with probability `fidelity` a trial is all dark,
/// otherwise it follows the bright model.
pub fn synthesize_histogram(
    fidelity: f64,
    p: &DetectionParams,
    bright: BrightModel,
    trials: u64,
    seed: u64,
) -> Result<CountHistogram> {
    p.validate()?;
    if !(0.0..=1.0).contains(&fidelity) {
        return Err(Error::InvalidParameter("fidelity must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bright_mean = p.bright_mean(bright.n_bright);
    let mut h = CountHistogram::default();
    for _ in 0..trials {
        let k = if rng.random::<f64>() < fidelity {
            draw_dark(p, bright.two_flip, &mut rng)
        } else {
            draw_poisson(bright_mean, &mut rng)
        };
        h.push(k);
    }
    Ok(h)
}

/// Largest `k` whose one-bright cumulative mass stays below `1e-3` of the
/// dark cumulative mass.
pub fn select_threshold(p: &DetectionParams, n_bright_min: usize) -> Result<usize> {
    p.validate()?;
    if p.gamma_b <= p.gamma_d || n_bright_min == 0 {
        return Err(Error::Inseparable);
    }
    let bright = p.bright_mean(n_bright_min);
    let mut dark_cdf = 0.0;
    let mut best = None;
    for k in 0..=(bright.ceil() as u64 + 10) {
        dark_cdf += count_distribution(p, k);
        if poisson_cdf(bright, k) < 1e-3 * dark_cdf {
            best = Some(k as usize);
        } else if best.is_some() {
            break;
        }
    }
    best.ok_or(Error::EmptyRegion)
}

/// Fidelity estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub fidelity: f64,
    pub stderr: f64,
    pub threshold: usize,
}

/// Maximum-likelihood all-dark fraction from the bins at or below the
/// threshold; trials above it are lumped into one outcome.
pub fn fit_fidelity(hist: &CountHistogram, p: &DetectionParams) -> Result<FidelityEstimate> {
    fit_fidelity_with(hist, p, BrightModel::default(), select_threshold(p, 1)?)
}

pub fn fit_fidelity_with(
    hist: &CountHistogram,
    p: &DetectionParams,
    bright: BrightModel,
    threshold: usize,
) -> Result<FidelityEstimate> {
    p.validate()?;
    let trials = hist.trials();
    if trials == 0 {
        return Err(Error::EmptyRegion);
    }
    let bright_mean = p.bright_mean(bright.n_bright);
    let dark: Vec<f64> = (0..=threshold as u64).map(|k| count_distribution(p, k)).collect();
    let light: Vec<f64> = (0..=threshold as u64).map(|k| poisson_pmf(bright_mean, k)).collect();
    let dark_mass: f64 = dark.iter().sum();
    let light_mass: f64 = light.iter().sum();
    if dark_mass - light_mass <= 1e-12 {
        return Err(Error::DegenerateFit("threshold region carries no dark mass".into()));
    }
    let n_rest = (trials - hist.below(threshold)) as f64;
    let loglik = |f: f64| -> f64 {
        let mut l = 0.0;
        for k in 0..=threshold {
            let c = hist.get(k) as f64;
            if c > 0.0 {
                l += c * (f * dark[k] + (1.0 - f) * light[k]).max(1e-300).ln();
            }
        }
        if n_rest > 0.0 {
            l += n_rest * (1.0 - f * dark_mass - (1.0 - f) * light_mass).max(1e-300).ln();
        }
        l
    };
    let fidelity = golden_max(loglik, 0.0, 1.0, 1e-10);
    // binomial error of the below-threshold fraction, propagated through its slope in F
    let q = (fidelity * dark_mass + (1.0 - fidelity) * light_mass).clamp(0.0, 1.0);
    let stderr = (q * (1.0 - q) / trials as f64).sqrt() / (dark_mass - light_mass);
    Ok(FidelityEstimate {
        fidelity,
        stderr,
        threshold,
    })
}

/// Fraction of trials at or below the threshold, ignoring flips.
pub fn naive_fidelity(hist: &CountHistogram, threshold: usize) -> f64 {
    let t = hist.trials();
    if t == 0 {
        return 0.0;
    }
    hist.below(threshold) as f64 / t as f64
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the optimum may sit on the boundary
    [0.0, mid, 1.0]
        .into_iter()
        .filter(|x| (0.0..=1.0).contains(x))
        .max_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap_or(mid)
}
