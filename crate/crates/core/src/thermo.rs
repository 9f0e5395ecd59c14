//! Thermodynamic layer: the Legendre transform `g(mu, alpha)`, the occupation
//! law `nbar(mu, alpha)`, the chemical potential `mu(gamma, nu)`, the
//! deterministic energy `e0(gamma, nu)` and the phase classifier.
//!
//! Interval lengths `l` follow the exponential law `nu exp(-nu l) dl`.
//! Integrals over it are restricted to `l > pi / sqrt(mu)` (the occupation
//! vanishes below) and evaluated with a 64-node Gauss-Laguerre rule in
//! `t = nu (l - pi / sqrt(mu))`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use gauss_quad::GaussLaguerre;
use serde::{Deserialize, Serialize};

use crate::aux_interval::{build_aux_table, AuxTable};
use crate::error::{Error, Result};
use crate::model::Strength;

pub const LAGUERRE_NODES: usize = 64;

/// Relative primal/dual mismatch tolerated by [`e0_deterministic`].
pub const DUALITY_TOLERANCE: f64 = 1e-4;

const MU_BRACKET_STEPS: usize = 60;
const MU_LOWER_STEPS: usize = 200;

fn laguerre() -> &'static [(f64, f64)] {
    static RULE: OnceLock<GaussLaguerre> = OnceLock::new();
    RULE.get_or_init(|| GaussLaguerre::new(LAGUERRE_NODES, 0.0).expect("valid Laguerre rule")).as_node_weight_pairs()
}

/// Shared hard-wall table (`alpha = inf`, `kappa <= 1e5`, 96 knots), built
/// on first use.
pub fn hard_wall_table() -> &'static AuxTable {
    static TABLE: OnceLock<AuxTable> = OnceLock::new();
    TABLE.get_or_init(|| build_aux_table(Strength::Infinite, 1e5, 96).expect("hard-wall table builds"))
}

/// `nbar(mu, alpha)`: the minimizer of `n e(n, alpha) - mu n` over `n >= 0`.
pub fn nbar(mu: f64, table: &AuxTable) -> Result<f64> {
    if !mu.is_finite() {
        return Err(Error::Domain(format!("mu must be finite, got {mu}")));
    }
    let excess = mu - table.e0();
    if excess <= 0.0 {
        return Ok(0.0);
    }
    // d/dn [n e(n)] = e + n e' is increasing; its root lies in
    // [(2/3) excess, excess] up to interpolation noise.
    let slope = |n: f64| -> Result<f64> {
        let (e, d) = table.lookup(n)?;
        Ok(e + n * d - mu)
    };
    let mut lo = 0.6 * excess;
    if slope(lo)? > 0.0 {
        lo = 0.0;
    }
    let mut hi = excess * (1.0 + 1e-9);
    let mut grow = 0;
    while slope(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::Bracket(format!("no root for nbar at mu = {mu}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(nbar, g)` with `g(mu, alpha) = nbar e(nbar) - mu nbar <= 0`.
pub fn nbar_and_g(mu: f64, table: &AuxTable) -> Result<(f64, f64)> {
    let n = nbar(mu, table)?;
    if n == 0.0 {
        return Ok((0.0, 0.0));
    }
    let (e, _) = table.lookup(n)?;
    Ok((n, (n * (e - mu)).min(0.0)))
}

/// The Legendre transform `g(mu, alpha) = inf_n (n e(n, alpha) - mu n)`.
pub fn g_legendre(mu: f64, table: &AuxTable) -> Result<f64> {
    Ok(nbar_and_g(mu, table)?.1)
}

/// `lambda = exp(-pi nu / sqrt(mu))`.
pub fn occupied_fraction(mu: f64, nu: f64) -> f64 {
    (-PI * nu / mu.sqrt()).exp()
}

/// `f(x) = 1` for `x <= 1`, `x / (1 + ln x)^2` above.
pub fn f_scaling(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        x / (1.0 + x.ln()).powi(2)
    }
}

fn check_params(gamma: f64, nu: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    Ok(())
}

/// Integrals `nu int dp_nu(l) F(l)` over the occupied lengths, evaluated for
/// several integrands at once from one pass over the nodes.
struct Moments {
    /// `nu int dp (l gamma)^{-1} nbar`: the normalization `N(mu)`.
    mass: f64,
    /// `nu int dp (l^3 gamma)^{-1} g`.
    legendre: f64,
    /// `nu int dp (l^3 gamma)^{-1} nbar e(nbar)`: the primal energy.
    energy: f64,
    /// `nu int dp gamma^{-1} nbar`: the weighted mean length.
    length: f64,
}

fn moments(mu: f64, gamma: f64, nu: f64, table: &AuxTable) -> Result<Moments> {
    let threshold = table.e0().max(0.0).sqrt() / mu.sqrt();
    let prefactor = nu * (-nu * threshold).exp();
    let mut m = Moments { mass: 0.0, legendre: 0.0, energy: 0.0, length: 0.0 };
    if prefactor == 0.0 {
        return Ok(m);
    }
    for &(t, w) in laguerre() {
        let l = threshold + t / nu;
        let (n, g) = nbar_and_g(mu * l * l, table)?;
        if n == 0.0 {
            continue;
        }
        let l3 = l * l * l * gamma;
        m.mass += w * n / (l * gamma);
        m.legendre += w * g / l3;
        m.energy += w * (g + mu * l * l * n) / l3;
        m.length += w * n / gamma;
    }
    m.mass *= prefactor;
    m.legendre *= prefactor;
    m.energy *= prefactor;
    m.length *= prefactor;
    Ok(m)
}

/// `N(mu) = nu int dp_nu(l) (l gamma)^{-1} nbar(mu l^2, inf)`.
pub fn normalization(mu: f64, gamma: f64, nu: f64, table: &AuxTable) -> Result<f64> {
    check_params(gamma, nu)?;
    Ok(moments(mu, gamma, nu, table)?.mass)
}

/// The dual objective `mu + nu int dp_nu(l) (l^3 gamma)^{-1} g(mu l^2, inf)`.
pub fn dual_objective(mu: f64, gamma: f64, nu: f64, table: &AuxTable) -> Result<f64> {
    check_params(gamma, nu)?;
    Ok(mu + moments(mu, gamma, nu, table)?.legendre)
}

/// The chemical potential: the root of `N(mu) = 1`.
pub fn solve_mu(gamma: f64, nu: f64, table: &AuxTable) -> Result<f64> {
    check_params(gamma, nu)?;
    let mass = |mu: f64| -> Result<f64> { Ok(moments(mu, gamma, nu, table)?.mass) };
    let mut lo = table.e0().max(1e-300);
    let mut hi = 10.0 * gamma + 10.0 * nu * nu;
    if hi <= lo {
        hi = 2.0 * lo;
    }
    let mut steps = 0;
    while mass(hi)? < 1.0 {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > MU_BRACKET_STEPS {
            return Err(Error::Bracket(format!("N(mu) < 1 up to mu = {hi}")));
        }
    }
    // Few occupied intervals can push mu below e(0, inf).
    steps = 0;
    while mass(lo)? > 1.0 {
        hi = lo;
        lo *= 0.5;
        steps += 1;
        if steps > MU_LOWER_STEPS {
            return Err(Error::Bracket(format!("N(mu) > 1 down to mu = {lo}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `e0(gamma, nu)` from both sides of the duality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicEnergy {
    pub mu: f64,
    pub dual: f64,
    pub primal: f64,
    pub normalization: f64,
}

impl DeterministicEnergy {
    pub fn mismatch(&self) -> f64 {
        (self.primal - self.dual).abs() / self.dual.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn e0_deterministic(gamma: f64, nu: f64, table: &AuxTable) -> Result<DeterministicEnergy> {
    let mu = solve_mu(gamma, nu, table)?;
    let m = moments(mu, gamma, nu, table)?;
    let value = DeterministicEnergy { mu, dual: mu + m.legendre, primal: m.energy, normalization: m.mass };
    if value.mismatch() > DUALITY_TOLERANCE {
        return Err(Error::Consistency(format!(
            "primal {} and dual {} differ by {:.3e}",
            value.primal,
            value.dual,
            value.mismatch()
        )));
    }
    Ok(value)
}

/// Weighted mean occupied length `nu int dp_nu(l) l n(l)` at the given `mu`.
pub fn mean_interval(mu: f64, gamma: f64, nu: f64, table: &AuxTable) -> Result<f64> {
    check_params(gamma, nu)?;
    Ok(moments(mu, gamma, nu, table)?.length)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Extended,
    Transition,
    FragmentedLocalized,
    FewIntervals,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Extended => "extended",
            Phase::Transition => "transition",
            Phase::FragmentedLocalized => "fragmented_localized",
            Phase::FewIntervals => "few_intervals",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extended" => Ok(Phase::Extended),
            "transition" => Ok(Phase::Transition),
            "fragmented_localized" => Ok(Phase::FragmentedLocalized),
            "few_intervals" => Ok(Phase::FewIntervals),
            _ => Err(Error::Domain(format!("unknown phase {s:?}"))),
        }
    }
}

/// Phase boundaries in terms of `lambda` and `lambda nu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseThresholds {
    pub extended: f64,
    pub transition: f64,
    pub few_intervals: f64,
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        PhaseThresholds { extended: 0.9, transition: 0.1, few_intervals: 10.0 }
    }
}

impl PhaseThresholds {
    /// `lambda` decides first; `lambda nu` only splits the localized side.
    pub fn classify(&self, lambda: f64, nu: f64) -> Phase {
        if lambda >= self.extended {
            Phase::Extended
        } else if lambda >= self.transition {
            Phase::Transition
        } else if lambda * nu >= self.few_intervals {
            Phase::FragmentedLocalized
        } else {
            Phase::FewIntervals
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoSolution {
    pub gamma: f64,
    pub nu: f64,
    pub mu: f64,
    pub lambda_frac: f64,
    pub e0: f64,
    pub e0_primal: f64,
    pub phase: Phase,
    pub mean_interval: f64,
}

impl ThermoSolution {
    /// `lambda nu`: the mean number of occupied intervals.
    pub fn occupied_intervals(&self) -> f64 {
        self.lambda_frac * self.nu
    }

    /// `mean_interval nu / (1 + ln(1 + nu^2 / gamma))`, of order one.
    pub fn mean_interval_ratio(&self) -> f64 {
        self.mean_interval * self.nu / (1.0 + (1.0 + self.nu * self.nu / self.gamma).ln())
    }

    /// `gamma (ln 1/lambda)^2 / (lambda nu^2)`, of order one.
    pub fn occupation_ratio(&self) -> f64 {
        let l = -self.lambda_frac.ln();
        self.gamma * l * l / (self.lambda_frac * self.nu * self.nu)
    }

    /// `pi^2 nu^2 / (ln 1/lambda)^2`, equal to `mu` by construction.
    pub fn mu_from_lambda(&self) -> f64 {
        let l = -self.lambda_frac.ln();
        PI * PI * self.nu * self.nu / (l * l)
    }
}

pub fn classify_phase(gamma: f64, nu: f64, table: &AuxTable) -> Result<ThermoSolution> {
    classify_phase_with(gamma, nu, table, &PhaseThresholds::default())
}

pub fn classify_phase_with(
    gamma: f64,
    nu: f64,
    table: &AuxTable,
    thresholds: &PhaseThresholds,
) -> Result<ThermoSolution> {
    let e = e0_deterministic(gamma, nu, table)?;
    let lambda = occupied_fraction(e.mu, nu);
    Ok(ThermoSolution {
        gamma,
        nu,
        mu: e.mu,
        lambda_frac: lambda,
        e0: e.dual,
        e0_primal: e.primal,
        phase: thresholds.classify(lambda, nu),
        mean_interval: mean_interval(e.mu, gamma, nu, table)?,
    })
}
