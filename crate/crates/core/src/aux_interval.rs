//! The single-interval problem
//!
//! ```text
//! e(kappa, alpha) = inf_{|phi|_2 = 1} int_0^1 |phi'|^2 + (kappa/2)|phi|^4 + (alpha/2)(|phi(0)|^2 + |phi(1)|^2)
//! ```
//!
//! and memoized tables of `kappa -> e(kappa, alpha)` used by the
//! thermodynamic layer.
//!
//! Finite `alpha` keeps the two endpoint values as free unknowns (half
//! trapezoid weight) with the boundary penalty on their squares; `alpha = inf`
//! pins them to zero.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::minimize::{minimize, MinimizerOptions, QuadraticForm, QuarticFunctional};
use crate::model::{build_grid, trapezoid_weights, GridFunction, Strength};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuxResult {
    pub kappa: f64,
    pub alpha: Strength,
    pub energy: f64,
    pub minimizer: GridFunction,
    pub quartic_integral: f64,
    pub chemical_potential: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl AuxResult {
    /// Largest deviation from reflection symmetry about `x = 1/2`.
    pub fn symmetry_defect(&self) -> f64 {
        let v = &self.minimizer.values;
        let n = v.len();
        (0..n / 2).map(|i| (v[i] - v[n - 1 - i]).abs()).fold(0.0, f64::max)
    }
}

/// Starting point for the auxiliary minimization.
#[derive(Debug, Clone)]
pub enum AuxStart {
    /// `sin(pi x)` for hard walls, `cos(b_alpha (x - 1/2))` otherwise.
    Natural,
    /// Positive random start from a seed.
    Random(u64),
    /// Explicit values on the matching grid.
    Values(Vec<f64>),
}

/// The discretized auxiliary functional on a grid with `m` interior nodes.
pub fn aux_functional(kappa: f64, alpha: Strength, m: usize) -> QuarticFunctional {
    let h = 1.0 / (m + 1) as f64;
    match alpha {
        Strength::Infinite => {
            QuarticFunctional::new(QuadraticForm::kinetic(m, h, true), trapezoid_weights(m, h, false), kappa)
        }
        Strength::Finite(alpha) => {
            let n = m + 2;
            let mut q = QuadraticForm::kinetic(n, h, false);
            q.sites[0] += 0.5 * alpha;
            q.sites[n - 1] += 0.5 * alpha;
            QuarticFunctional::new(q, trapezoid_weights(n, h, true), kappa)
        }
    }
}

fn node_coordinates(alpha: Strength, m: usize) -> Vec<f64> {
    let h = 1.0 / (m + 1) as f64;
    match alpha {
        Strength::Infinite => (1..=m).map(|i| i as f64 * h).collect(),
        Strength::Finite(_) => (0..m + 2).map(|i| i as f64 * h).collect(),
    }
}

fn initial_guess(alpha: Strength, m: usize, start: &AuxStart) -> Vec<f64> {
    let xs = node_coordinates(alpha, m);
    match start {
        AuxStart::Natural => match alpha {
            Strength::Infinite => xs.iter().map(|x| (PI * x).sin()).collect(),
            Strength::Finite(a) => {
                let b = kappa0_wavenumber(a);
                xs.iter().map(|x| (b * (x - 0.5)).cos()).collect()
            }
        },
        AuxStart::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            xs.iter()
                .map(|x| {
                    let envelope = if alpha.is_infinite() { (PI * x).sin() } else { 1.0 };
                    envelope * rng.gen_range(0.2..1.0)
                })
                .collect()
        }
        AuxStart::Values(v) => v.clone(),
    }
}

/// Solve the auxiliary problem on a grid with `m` interior nodes.
pub fn solve_aux(kappa: f64, alpha: Strength, m: usize) -> Result<AuxResult> {
    solve_aux_with(kappa, alpha, m, &AuxStart::Natural, &MinimizerOptions::default())
}

pub fn solve_aux_with(
    kappa: f64,
    alpha: Strength,
    m: usize,
    start: &AuxStart,
    opts: &MinimizerOptions,
) -> Result<AuxResult> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa must be >= 0, got {kappa}")));
    }
    let grid = build_grid(m)?;
    let f = aux_functional(kappa, alpha, grid.m);
    let init = initial_guess(alpha, grid.m, start);
    if init.len() != f.len() {
        return Err(Error::Domain(format!("initial guess has {} values, grid needs {}", init.len(), f.len())));
    }
    let min = minimize(&f, &init, opts)?;
    let minimizer = match alpha {
        Strength::Infinite => GridFunction::dirichlet(min.values),
        Strength::Finite(_) => GridFunction::free(min.values),
    };
    let quartic_integral = minimizer.quartic_integral();
    Ok(AuxResult {
        kappa,
        alpha,
        energy: min.energy,
        minimizer,
        quartic_integral,
        chemical_potential: min.chemical_potential,
        iterations: min.iterations,
        residual: min.residual,
    })
}

/// Solve on grids `m` and `2m + 1` and Richardson-extrapolate the energy and
/// the quartic integral (both converge as `h^2`). The minimizer is the fine one.
pub fn solve_aux_extrapolated(kappa: f64, alpha: Strength, m: usize) -> Result<AuxResult> {
    let coarse = solve_aux(kappa, alpha, m)?;
    let mut fine = solve_aux(kappa, alpha, 2 * m + 1)?;
    fine.energy = (4.0 * fine.energy - coarse.energy) / 3.0;
    fine.quartic_integral = (4.0 * fine.quartic_integral - coarse.quartic_integral) / 3.0;
    Ok(fine)
}

/// `b_alpha` in `[0, pi)`: the wavenumber of the `kappa = 0` minimizer
/// `cos(b (x - 1/2))`, fixed by the natural boundary condition
/// `phi'(0) = (alpha/2) phi(0)`, i.e. `b tan(b/2) = alpha/2`.
pub fn kappa0_wavenumber(alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return 0.0;
    }
    if alpha.is_infinite() {
        return PI;
    }
    let f = |b: f64| b * (0.5 * b).sin() - 0.5 * alpha * (0.5 * b).cos();
    let (mut lo, mut hi) = (0.0, PI);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `e(0, alpha) = b_alpha^2`.
pub fn kappa0_energy(alpha: Strength) -> f64 {
    match alpha {
        Strength::Infinite => PI * PI,
        Strength::Finite(a) => kappa0_wavenumber(a).powi(2),
    }
}

/// `int_0^1 |phi_{0,alpha}|^4` for the normalized `kappa = 0` minimizer.
pub fn kappa0_quartic_integral(alpha: Strength) -> f64 {
    let b = match alpha {
        Strength::Infinite => PI,
        Strength::Finite(a) => kappa0_wavenumber(a),
    };
    if b < 1e-8 {
        return 1.0;
    }
    // int cos^2(b(x-1/2)) = 1/2 + sin(b)/(2b)
    // int cos^4(b(x-1/2)) = 3/8 + sin(b)/(2b) + sin(2b)/(16b)
    let c2 = 0.5 + b.sin() / (2.0 * b);
    let c4 = 0.375 + b.sin() / (2.0 * b) + (2.0 * b).sin() / (16.0 * b);
    c4 / (c2 * c2)
}

/// Memoized `kappa -> e(kappa, alpha)` with derivative values at the knots.
///
/// The derivative is the envelope value `e'(kappa) = (1/2) int |phi_kappa|^4`
/// clamped to `[1/2, 3/4]`; between knots the table is a cubic Hermite
/// interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxTable {
    alpha: Strength,
    kappa: Vec<f64>,
    energy: Vec<f64>,
    derivative: Vec<f64>,
}

pub const MIN_TABLE_KNOTS: usize = 32;

/// How far past `kappa_max` [`AuxTable::lookup`] extrapolates.
pub const TAIL_EXTENSION_CAP: f64 = 1e12;

/// Grid size used for table knots up to `kappa_max`: odd, resolving the
/// healing length `kappa^{-1/2}` with at least 15 points.
pub fn table_grid_points(kappa_max: f64) -> usize {
    let want = (15.0 * kappa_max.max(0.0).sqrt()).ceil() as usize;
    let m = want.clamp(511, 65_535);
    m | 1
}

pub fn build_aux_table(alpha: Strength, kappa_max: f64, knots: usize) -> Result<AuxTable> {
    build_aux_table_on(alpha, kappa_max, knots, table_grid_points(kappa_max))
}

/// Build a table whose knots are solved on grids `m` and `2m + 1` with
/// Richardson extrapolation.
pub fn build_aux_table_on(alpha: Strength, kappa_max: f64, knots: usize, m: usize) -> Result<AuxTable> {
    if knots < MIN_TABLE_KNOTS {
        return Err(Error::Table(format!("need at least {MIN_TABLE_KNOTS} knots, got {knots}")));
    }
    if !(kappa_max > 0.0 && kappa_max.is_finite()) {
        return Err(Error::Domain(format!("kappa_max must be positive, got {kappa_max}")));
    }
    let kappa_min = (1e-3f64).min(kappa_max / 10.0);
    let ratio = (kappa_max / kappa_min).powf(1.0 / (knots - 2) as f64);
    let mut kappas = Vec::with_capacity(knots);
    kappas.push(0.0);
    for i in 0..knots - 1 {
        kappas.push(kappa_min * ratio.powi(i as i32));
    }
    *kappas.last_mut().unwrap() = kappa_max;

    let opts = MinimizerOptions::default();
    let fine_m = 2 * m + 1;
    let mut start_coarse = AuxStart::Natural;
    let mut start_fine = AuxStart::Natural;
    let mut energy = Vec::with_capacity(knots);
    let mut derivative = Vec::with_capacity(knots);
    for &k in &kappas {
        let coarse = solve_aux_with(k, alpha, m, &start_coarse, &opts)?;
        let fine = solve_aux_with(k, alpha, fine_m, &start_fine, &opts)?;
        energy.push((4.0 * fine.energy - coarse.energy) / 3.0);
        let quartic = (4.0 * fine.quartic_integral - coarse.quartic_integral) / 3.0;
        derivative.push(0.5 * quartic);
        start_coarse = AuxStart::Values(coarse.minimizer.values);
        start_fine = AuxStart::Values(fine.minimizer.values);
    }

    let table = AuxTable { alpha, kappa: kappas, energy, derivative };
    table.check_invariants()?;
    Ok(table.clamped())
}

impl AuxTable {
    pub fn alpha(&self) -> Strength {
        self.alpha
    }

    pub fn kappa_max(&self) -> f64 {
        *self.kappa.last().unwrap()
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.kappa.iter().zip(&self.energy).zip(&self.derivative).map(|((&k, &e), &d)| (k, e, d))
    }

    pub fn len(&self) -> usize {
        self.kappa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa.is_empty()
    }

    /// `e(0, alpha)` as stored in the table.
    pub fn e0(&self) -> f64 {
        self.energy[0]
    }

    fn clamped(mut self) -> Self {
        self.derivative.iter_mut().for_each(|d| *d = d.clamp(0.5, 0.75));
        self
    }

    /// Verify concavity of `e`, convexity of `kappa e`, the derivative
    /// bounds and the `[kappa/2, 3 kappa/4]` sandwich at every knot.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.kappa.len();
        let noise = |i: usize| 1e-9 * (1.0 + self.energy[i].abs());
        for i in 0..n {
            let d = self.derivative[i];
            if !(0.5 - 1e-6..=0.75 + 1e-6).contains(&d) {
                return Err(Error::Table(format!("derivative {d} outside [1/2, 3/4] at kappa = {}", self.kappa[i])));
            }
            if i > 0 {
                let k = self.kappa[i];
                let rise = self.energy[i] - self.energy[0];
                let slack = noise(i) + noise(0);
                if rise < 0.5 * k - slack || rise > 0.75 * k + slack {
                    return Err(Error::Table(format!(
                        "e(kappa) - e(0) = {rise} outside [kappa/2, 3 kappa/4] at kappa = {k}"
                    )));
                }
            }
        }
        for i in 1..n.saturating_sub(1) {
            let (k0, k1, k2) = (self.kappa[i - 1], self.kappa[i], self.kappa[i + 1]);
            let (e0, e1, e2) = (self.energy[i - 1], self.energy[i], self.energy[i + 1]);
            let s_left = (e1 - e0) / (k1 - k0);
            let s_right = (e2 - e1) / (k2 - k1);
            let tol = 2.0 * (noise(i - 1) + noise(i)) / (k1 - k0) + 2.0 * (noise(i) + noise(i + 1)) / (k2 - k1);
            if s_right > s_left + tol {
                return Err(Error::Table(format!("e not concave near kappa = {k1}")));
            }
            let p_left = (k1 * e1 - k0 * e0) / (k1 - k0);
            let p_right = (k2 * e2 - k1 * e1) / (k2 - k1);
            let ptol = tol * (k2 + 1.0);
            if p_right < p_left - ptol {
                return Err(Error::Table(format!("kappa e not convex near kappa = {k1}")));
            }
        }
        Ok(())
    }

    fn segment(&self, kappa: f64) -> Result<usize> {
        if !(kappa >= 0.0) {
            return Err(Error::Domain(format!("kappa must be >= 0, got {kappa}")));
        }
        let max = self.kappa_max();
        if kappa > max * (1.0 + 1e-12) {
            return Err(Error::Range { needed: kappa, available: max });
        }
        let i = self.kappa.partition_point(|&k| k <= kappa);
        Ok(i.clamp(1, self.kappa.len() - 1) - 1)
    }

    fn hermite(&self, i: usize, kappa: f64) -> (f64, f64) {
        let (k0, k1) = (self.kappa[i], self.kappa[i + 1]);
        let (y0, y1) = (self.energy[i], self.energy[i + 1]);
        let (d0, d1) = (self.derivative[i], self.derivative[i + 1]);
        let dk = k1 - k0;
        let t = ((kappa - k0) / dk).clamp(0.0, 1.0);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let value = h00 * y0 + h10 * dk * d0 + h01 * y1 + h11 * dk * d1;
        let dh00 = 6.0 * t2 - 6.0 * t;
        let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
        let dh01 = -6.0 * t2 + 6.0 * t;
        let dh11 = 3.0 * t2 - 2.0 * t;
        let slope = (dh00 * y0 + dh01 * y1) / dk + dh10 * d0 + dh11 * d1;
        (value, slope)
    }

    /// Interpolated `e(kappa, alpha)`.
    pub fn energy(&self, kappa: f64) -> Result<f64> {
        let i = self.segment(kappa)?;
        Ok(self.hermite(i, kappa).0)
    }

    /// Interpolated `e'(kappa, alpha)`.
    pub fn derivative(&self, kappa: f64) -> Result<f64> {
        let i = self.segment(kappa)?;
        Ok(self.hermite(i, kappa).1)
    }

    /// `(e, e')` in one lookup.
    pub fn energy_and_derivative(&self, kappa: f64) -> Result<(f64, f64)> {
        let i = self.segment(kappa)?;
        Ok(self.hermite(i, kappa))
    }

    /// `(e, e')` with the table continued past `kappa_max`. The hard wall
    /// continues as `kappa/2 + a sqrt(kappa) + c`, matched in value and slope
    /// at the last knot. A finite wall continues with slope 1/2, which never
    /// exceeds the true energy since `e - kappa/2` is nondecreasing.
    /// Lookups beyond `TAIL_EXTENSION_CAP * kappa_max` are range errors.
    pub fn lookup(&self, kappa: f64) -> Result<(f64, f64)> {
        let max = self.kappa_max();
        if kappa <= max {
            return self.energy_and_derivative(kappa);
        }
        if !(kappa <= max * TAIL_EXTENSION_CAP) {
            return Err(Error::Range { needed: kappa, available: max * TAIL_EXTENSION_CAP });
        }
        let n = self.kappa.len() - 1;
        let (e, d) = (self.energy[n], self.derivative[n]);
        if !self.alpha.is_infinite() {
            return Ok((e + 0.5 * (kappa - max), 0.5));
        }
        let s = max.sqrt();
        let a = 2.0 * s * (d - 0.5);
        let c = e - 0.5 * max - a * s;
        let r = kappa.sqrt();
        Ok((0.5 * kappa + a * r + c, 0.5 + 0.5 * a / r))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    alpha: Strength,
    knots: Vec<[f64; 3]>,
}

impl Serialize for AuxTable {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TableRepr { alpha: self.alpha, knots: self.knots().map(|(k, e, d)| [k, e, d]).collect() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AuxTable {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TableRepr::deserialize(deserializer)?;
        if repr.knots.len() < 2 {
            return Err(de::Error::custom("table needs at least two knots"));
        }
        if repr.knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(de::Error::custom("table knots must be strictly increasing"));
        }
        Ok(AuxTable {
            alpha: repr.alpha,
            kappa: repr.knots.iter().map(|k| k[0]).collect(),
            energy: repr.knots.iter().map(|k| k[1]).collect(),
            derivative: repr.knots.iter().map(|k| k[2]).collect(),
        })
    }
}
