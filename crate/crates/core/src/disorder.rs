//! Poisson scatterer configurations and finite-sample checks of their
//! statistics: counts, spacings, the largest gap, and the tail and moment
//! bounds used for the energy estimates.

use gauss_quad::GaussLaguerre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{config_from_positions, ScattererConfig, Strength};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub nu: f64,
    pub samples: usize,
    pub base_seed: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec { nu: 50.0, samples: 64, base_seed: 0 }
    }
}

impl EnsembleSpec {
    pub fn new(nu: f64, samples: usize, base_seed: u64) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::Domain(format!("nu must be positive, got {nu}")));
        }
        if samples == 0 {
            return Err(Error::Domain("need at least one sample".into()));
        }
        Ok(EnsembleSpec { nu, samples, base_seed })
    }

    /// Seed of sample `index`: `base_seed + index`.
    pub fn seed(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Points of a density-`nu` Poisson process on (0, 1) from cumulative
/// exponential spacings.
pub fn sample_positions(nu: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let exp = Exp::new(nu).expect("positive rate");
    let mut out = Vec::new();
    let mut z = 0.0;
    loop {
        z += exp.sample(&mut r);
        if z >= 1.0 {
            break;
        }
        if z > 0.0 {
            out.push(z);
        }
    }
    out
}

/// The exponential increments behind [`sample_positions`] for the same
/// seed: the spacing from 0 to the first point and from every point to the
/// next one, the last of which crosses 1. Whether an increment is drawn
/// depends only on the earlier ones, so pooled increments follow Exp(`nu`)
/// exactly, unlike the spacings cut off at 1.
pub fn forward_spacings(nu: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let exp = Exp::new(nu).expect("positive rate");
    let mut out = Vec::new();
    let mut z = 0.0;
    while z < 1.0 {
        let l = exp.sample(&mut r);
        z += l;
        out.push(l);
    }
    out
}

/// Same law from a Poisson count and sorted uniform points.
pub fn sample_positions_order_statistics(nu: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let count = Poisson::new(nu).expect("positive mean").sample(&mut r) as usize;
    let mut out: Vec<f64> = (0..count)
        .map(|_| loop {
            let u: f64 = r.gen();
            if u > 0.0 {
                break u;
            }
        })
        .collect();
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

pub fn sample_config(nu: f64, seed: u64, strength: Strength) -> Result<ScattererConfig> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    config_from_positions(&sample_positions(nu, seed), strength)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square of observed counts against Poisson(`nu`), with bins
/// merged from both tails until each expects at least five observations.
pub fn poisson_chi_square(counts: &[usize], nu: f64) -> ChiSquareTest {
    let k = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0).max((nu + 10.0 * nu.sqrt()) as usize + 1);
    let mut observed = vec![0.0; max + 1];
    for &c in counts {
        observed[c] += 1.0;
    }
    let mut expected = Vec::with_capacity(max + 1);
    let mut log_p = -nu;
    for n in 0..=max {
        if n > 0 {
            log_p += nu.ln() - (n as f64).ln();
        }
        expected.push(k * log_p.exp());
    }
    // Last bin collects the upper tail.
    let tail: f64 = k - expected[..max].iter().sum::<f64>();
    expected[max] = tail.max(0.0);

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for n in 0..=max {
        o += observed[n];
        e += expected[n];
        if e >= 5.0 {
            bins.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    ChiSquareTest { statistic, dof, p_value }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub nu: f64,
    pub samples: usize,
    pub mean: f64,
    pub chi_square: ChiSquareTest,
}

/// Point counts of `samples` configurations against Poisson(`nu`).
pub fn count_statistics(nu: f64, samples: usize, seed: u64) -> Result<CountStats> {
    let spec = EnsembleSpec::new(nu, samples, seed)?;
    let counts: Vec<usize> = (0..samples).map(|i| sample_positions(nu, spec.seed(i)).len()).collect();
    let mean = counts.iter().sum::<usize>() as f64 / samples as f64;
    Ok(CountStats { nu, samples, mean, chi_square: poisson_chi_square(&counts, nu) })
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Critical KS distance at the 1% level for effective sample size `n`.
pub fn ks_critical(n: f64) -> f64 {
    1.63 / n.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxGapRow {
    pub length: f64,
    pub ratios: Vec<f64>,
    pub median: f64,
    pub fraction_below_2: f64,
    pub fraction_above_5: f64,
    pub fraction_in_window: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// `(<l>, <l^2>)` of forward spacings.
    pub spacing_moments: (f64, f64),
    pub spacings: usize,
    pub ks_distance: f64,
    pub ks_critical: f64,
    /// Correlation of adjacent forward spacings.
    pub adjacent_correlation: f64,
    pub count_chi2: ChiSquareTest,
    pub max_gap_ratios: Vec<MaxGapRow>,
}

/// Forward spacings (see [`forward_spacings`]) pooled over configurations
/// until at least `min_spacings` are collected, adjacent pairs, and the
/// per-configuration point counts.
fn pooled_spacings(nu: f64, min_spacings: usize, seed: u64) -> (Vec<f64>, Vec<(f64, f64)>, Vec<usize>) {
    let mut spacings = Vec::with_capacity(min_spacings);
    let mut pairs = Vec::new();
    let mut counts = Vec::new();
    let mut i = 0u64;
    while spacings.len() < min_spacings {
        let local = forward_spacings(nu, seed.wrapping_add(i));
        counts.push(local.len() - 1);
        for w in local.windows(2) {
            pairs.push((w[0], w[1]));
        }
        spacings.extend(local);
        i += 1;
    }
    (spacings, pairs, counts)
}

fn correlation(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spacing statistics from at least `min_spacings` forward spacings.
pub fn spacing_statistics(nu: f64, min_spacings: usize, seed: u64) -> Result<GapStats> {
    EnsembleSpec::new(nu, min_spacings, seed)?;
    let (spacings, pairs, counts) = pooled_spacings(nu, min_spacings, seed);
    let n = spacings.len() as f64;
    let m1 = spacings.iter().sum::<f64>() / n;
    let m2 = spacings.iter().map(|l| l * l).sum::<f64>() / n;
    Ok(GapStats {
        spacing_moments: (m1, m2),
        spacings: spacings.len(),
        ks_distance: ks_distance(&spacings, |l| 1.0 - (-nu * l).exp()),
        ks_critical: ks_critical(n),
        adjacent_correlation: correlation(&pairs),
        count_chi2: poisson_chi_square(&counts, nu),
        max_gap_ratios: Vec::new(),
    })
}

/// Largest spacing of a density-`density` Poisson process on an interval
/// of length `length`.
pub fn max_gap(density: f64, length: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let exp = Exp::new(density).expect("positive rate");
    let mut z = exp.sample(&mut r);
    let mut best: f64 = 0.0;
    loop {
        let step = exp.sample(&mut r);
        if z + step > length {
            break;
        }
        best = best.max(step);
        z += step;
    }
    best
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ratios `max_gap * density / ln l` for each length over `trials` seeded runs.
pub fn max_gap_scaling(density: f64, lengths: &[f64], trials: usize, seed: u64) -> Result<Vec<MaxGapRow>> {
    if !(density > 0.0) || trials == 0 {
        return Err(Error::Domain("density and trials must be positive".into()));
    }
    if lengths.windows(2).any(|w| w[1] <= w[0]) || lengths.iter().any(|&l| !(l > 1.0)) {
        return Err(Error::Domain("lengths must be increasing and > 1".into()));
    }
    Ok(lengths
        .iter()
        .enumerate()
        .map(|(li, &l)| {
            let ratios: Vec<f64> = (0..trials)
                .map(|t| {
                    let s = seed.wrapping_add(((li as u64) << 32) | t as u64);
                    max_gap(density, l, s) * density / l.ln()
                })
                .collect();
            let k = trials as f64;
            MaxGapRow {
                length: l,
                median: median(&ratios),
                fraction_below_2: ratios.iter().filter(|&&r| r <= 2.0).count() as f64 / k,
                fraction_above_5: ratios.iter().filter(|&&r| r > 5.0).count() as f64 / k,
                fraction_in_window: ratios.iter().filter(|&&r| (1.0..=5.0).contains(&r)).count() as f64 / k,
                ratios,
            }
        })
        .collect())
}

/// `1 - lambda + lambda ln lambda`.
pub fn tail_exponent(lambda: f64) -> f64 {
    if lambda == 0.0 {
        1.0
    } else {
        1.0 - lambda + lambda * lambda.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub exponent: f64,
}

impl TailCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

fn log_pmf(nu: f64, m: u64) -> f64 {
    let mf = m as f64;
    -nu + mf * nu.ln() - statrs::function::gamma::ln_gamma(mf + 1.0)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Poisson tail `P(X >= lambda nu)` for `lambda >= 1` (or `P(X <= lambda nu)`
/// for `lambda <= 1`) against `exp(-nu (1 - lambda + lambda ln lambda))`.
pub fn tail_bound_check(nu: f64, lambda: f64) -> Result<TailCheck> {
    if !(nu > 0.0 && lambda >= 0.0) {
        return Err(Error::Domain("need nu > 0 and lambda >= 0".into()));
    }
    let cut = lambda * nu;
    let log_lhs = if lambda >= 1.0 {
        let start = cut.ceil() as u64;
        let stop = start + (50.0 * nu.sqrt() + 50.0 + nu) as u64;
        log_sum_exp((start..=stop).map(|m| log_pmf(nu, m)))
    } else {
        let stop = cut.floor() as u64;
        log_sum_exp((0..=stop).map(|m| log_pmf(nu, m)))
    };
    let exponent = tail_exponent(lambda);
    Ok(TailCheck { lhs: log_lhs.exp(), rhs: (-nu * exponent).exp(), exponent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub value: f64,
    pub bound: f64,
}

/// `k! 2^k`.
pub fn moment_bound(k: u32) -> f64 {
    (1..=k).map(|i| i as f64).product::<f64>() * 2f64.powi(k as i32)
}

fn moment_integral(x: f64, k: u32, nodes: usize) -> f64 {
    let rule = GaussLaguerre::new(nodes, 0.0).expect("valid Laguerre rule");
    // e^x int_x^inf e^{-t} (t - x^2/t)^k dt with t = x + s.
    rule.integrate(|s| {
        let t = x + s;
        if t == 0.0 {
            0.0
        } else {
            (t - x * x / t).powi(k as i32)
        }
    })
}

/// `e^x int_x^inf e^{-t} (t - x^2/t)^k dt` and the bound `k! 2^k`.
pub fn moment_bound_check(x: f64, k: u32) -> Result<MomentCheck> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("x must be >= 0, got {x}")));
    }
    let value = moment_integral(x, k, 96);
    let check = moment_integral(x, k, 64);
    if (value - check).abs() > 1e-10 * value.abs().max(1.0) {
        return Err(Error::Convergence { iterations: 96, residual: (value - check).abs() });
    }
    Ok(MomentCheck { value, bound: moment_bound(k) })
}
