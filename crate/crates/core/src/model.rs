//! Shared domain types: model parameters, scatterer configurations and
//! grid functions on the unit interval.
//!
//! Every discretization in the crate uses the same uniform grid convention:
//! `M` interior nodes `x_i = i h`, `h = 1/(M+1)`, and trapezoid quadrature
//! with the endpoint values either pinned to zero (Dirichlet) or carried as
//! free unknowns with half weight.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Smallest admissible number of interior grid nodes.
pub const MIN_GRID_POINTS: usize = 16;

/// Scatterers closer than this are merged into one delta.
pub const MERGE_DISTANCE: f64 = 1e-12;

/// Strength of a delta scatterer (or of the boundary penalty in the
/// auxiliary problem). `Infinite` means a hard Dirichlet wall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strength {
    Finite(f64),
    Infinite,
}

impl Strength {
    pub fn finite(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::Domain(format!("strength must be >= 0, got {value}")));
        }
        if value.is_infinite() {
            return Ok(Strength::Infinite);
        }
        Ok(Strength::Finite(value))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Strength::Infinite)
    }

    /// The strength as a float, with `f64::INFINITY` for the hard wall.
    pub fn value(&self) -> f64 {
        match *self {
            Strength::Finite(v) => v,
            Strength::Infinite => f64::INFINITY,
        }
    }

    /// Multiply by a nonnegative length, e.g. `alpha = ell * sigma`.
    pub fn scaled(&self, factor: f64) -> Strength {
        match *self {
            Strength::Finite(v) => Strength::Finite(v * factor),
            Strength::Infinite => Strength::Infinite,
        }
    }
}

impl fmt::Display for Strength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strength::Finite(v) => write!(f, "{v}"),
            Strength::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Strength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Strength::Infinite),
            other => {
                let v: f64 = other.parse().map_err(|_| Error::Domain(format!("cannot parse strength '{s}'")))?;
                Strength::finite(v)
            }
        }
    }
}

impl Serialize for Strength {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Strength::Finite(v) => serializer.serialize_f64(*v),
            Strength::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Strength {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct StrengthVisitor;

        impl Visitor<'_> for StrengthVisitor {
            type Value = Strength;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Strength, E> {
                Strength::finite(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Strength, E> {
                Ok(Strength::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Strength, E> {
                Strength::finite(v as f64).map_err(E::custom)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Strength, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(StrengthVisitor)
    }
}

/// The physical triple `(gamma, sigma, nu)` plus numerical controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub gamma: f64,
    pub sigma: Strength,
    pub nu: f64,
    pub grid_points: usize,
    pub tol_energy: f64,
    pub tol_root: f64,
    pub max_iter: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            gamma: 0.0,
            sigma: Strength::Finite(0.0),
            nu: 1.0,
            grid_points: 1023,
            tol_energy: 1e-10,
            tol_root: 1e-8,
            max_iter: 20_000,
        }
    }
}

impl ModelParams {
    pub fn new(gamma: f64, sigma: Strength, nu: f64) -> Result<Self> {
        let params = ModelParams { gamma, sigma, nu, ..Default::default() };
        params.validate()?;
        Ok(params)
    }

    pub fn with_grid(mut self, grid_points: usize) -> Self {
        self.grid_points = grid_points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Domain(format!("nu must be > 0, got {}", self.nu)));
        }
        if let Strength::Finite(s) = self.sigma {
            if !(s >= 0.0) {
                return Err(Error::Domain(format!("sigma must be >= 0, got {s}")));
            }
        }
        if self.grid_points < MIN_GRID_POINTS {
            return Err(Error::Resolution { points: self.grid_points, minimum: MIN_GRID_POINTS });
        }
        if !(self.tol_energy > 0.0 && self.tol_root > 0.0 && self.max_iter > 0) {
            return Err(Error::Domain("tolerances and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Uniform grid with `m` interior nodes on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub m: usize,
    pub h: f64,
}

impl Grid {
    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    /// Interior node coordinates `x_1 .. x_M`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.m).map(|i| self.node(i)).collect()
    }

    /// The grid with spacing `h/2`, i.e. `2M + 1` interior nodes.
    pub fn refined(&self) -> Grid {
        Grid { m: 2 * self.m + 1, h: 1.0 / (2 * self.m + 2) as f64 }
    }
}

/// Build the uniform grid with `m` interior nodes, checking the resolution guard.
pub fn build_grid(m: usize) -> Result<Grid> {
    if m < MIN_GRID_POINTS {
        return Err(Error::Resolution { points: m, minimum: MIN_GRID_POINTS });
    }
    Ok(Grid { m, h: 1.0 / (m + 1) as f64 })
}

/// One disorder realization on the unit interval.
///
/// Coincident points (closer than [`MERGE_DISTANCE`]) are merged; the merged
/// site keeps a multiplicity so its effective strength is `mult * sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererConfig {
    positions: Vec<f64>,
    multiplicity: Vec<u32>,
    strength: Strength,
    gaps: Vec<f64>,
}

impl ScattererConfig {
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn multiplicity(&self) -> &[u32] {
        &self.multiplicity
    }

    pub fn strength(&self) -> Strength {
        self.strength
    }

    /// Effective delta strength at site `i` (summed over merged points).
    pub fn site_strength(&self, i: usize) -> Strength {
        self.strength.scaled(self.multiplicity[i] as f64)
    }

    /// Gap lengths `l_0 .. l_m`; they sum to one.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// Number of distinct scatterer sites.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of points counted with multiplicity.
    pub fn point_count(&self) -> usize {
        self.multiplicity.iter().map(|&k| k as usize).sum()
    }

    /// Endpoints of gap `j`: `(z_j, z_{j+1})` with `z_0 = 0`, `z_{m+1} = 1`.
    pub fn gap_bounds(&self, j: usize) -> (f64, f64) {
        let left = if j == 0 { 0.0 } else { self.positions[j - 1] };
        let right = if j == self.positions.len() { 1.0 } else { self.positions[j] };
        (left, right)
    }

    /// Same positions with a different strength.
    pub fn with_strength(&self, strength: Strength) -> ScattererConfig {
        ScattererConfig { strength, ..self.clone() }
    }

    /// Sum of the delta strengths, `m * sigma` counted with multiplicity.
    pub fn total_strength(&self) -> f64 {
        self.strength.value() * self.point_count() as f64
    }
}

/// Sort, merge coincident points and derive the gap lengths.
pub fn config_from_positions(positions: &[f64], strength: Strength) -> Result<ScattererConfig> {
    if let Some(bad) = positions.iter().find(|&&z| !(z > 0.0 && z < 1.0)) {
        return Err(Error::Domain(format!("scatterer position {bad} not in (0, 1)")));
    }
    let mut sorted = positions.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));

    let mut merged: Vec<f64> = Vec::with_capacity(sorted.len());
    let mut multiplicity: Vec<u32> = Vec::with_capacity(sorted.len());
    for z in sorted {
        match merged.last() {
            Some(&last) if z - last < MERGE_DISTANCE => {
                *multiplicity.last_mut().unwrap() += 1;
            }
            _ => {
                merged.push(z);
                multiplicity.push(1);
            }
        }
    }

    let mut gaps = Vec::with_capacity(merged.len() + 1);
    let mut prev = 0.0;
    for &z in &merged {
        gaps.push(z - prev);
        prev = z;
    }
    let partial: f64 = gaps.iter().sum();
    gaps.push(1.0 - partial);

    Ok(ScattererConfig { positions: merged, multiplicity, strength, gaps })
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    positions: Vec<f64>,
    strength: Strength,
}

impl Serialize for ScattererConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let positions = self
            .positions
            .iter()
            .zip(&self.multiplicity)
            .flat_map(|(&z, &k)| std::iter::repeat_n(z, k as usize))
            .collect();
        ConfigRepr { positions, strength: self.strength }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScattererConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = ConfigRepr::deserialize(deserializer)?;
        config_from_positions(&repr.positions, repr.strength).map_err(de::Error::custom)
    }
}

/// Sampled wavefunction on the uniform grid.
///
/// With `free_ends == false` the values are the `M` interior nodes and the
/// endpoint values are implied zeros. With `free_ends == true` the values
/// are all `M + 2` nodes including `x = 0` and `x = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub values: Vec<f64>,
    pub h: f64,
    pub free_ends: bool,
}

impl GridFunction {
    pub fn dirichlet(values: Vec<f64>) -> Self {
        let h = 1.0 / (values.len() + 1) as f64;
        GridFunction { values, h, free_ends: false }
    }

    pub fn free(values: Vec<f64>) -> Self {
        assert!(values.len() >= 2, "free-end grid function needs both endpoints");
        let h = 1.0 / (values.len() - 1) as f64;
        GridFunction { values, h, free_ends: true }
    }

    /// Trapezoid weights for each stored value.
    pub fn weights(&self) -> Vec<f64> {
        trapezoid_weights(self.values.len(), self.h, self.free_ends)
    }

    /// Coordinate of stored value `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        if self.free_ends {
            i as f64 * self.h
        } else {
            (i + 1) as f64 * self.h
        }
    }

    /// Full node list including endpoints (zeros for Dirichlet).
    pub fn with_endpoints(&self) -> Vec<f64> {
        if self.free_ends {
            self.values.clone()
        } else {
            let mut full = Vec::with_capacity(self.values.len() + 2);
            full.push(0.0);
            full.extend_from_slice(&self.values);
            full.push(0.0);
            full
        }
    }

    pub fn norm_sq(&self) -> f64 {
        weighted_power_sum(&self.values, self.h, self.free_ends, 2)
    }

    /// `int |phi|^4` by the trapezoid rule.
    pub fn quartic_integral(&self) -> f64 {
        weighted_power_sum(&self.values, self.h, self.free_ends, 4)
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
    }

    /// Piecewise linear interpolant at `x` in [0, 1].
    pub fn value_at(&self, x: f64) -> f64 {
        let full = self.with_endpoints();
        interpolate(&full, self.h, x)
    }

    /// Values decimated to at most `max_points` samples, as `(x, value)` pairs
    /// including endpoints.
    pub fn decimated(&self, max_points: usize) -> Vec<(f64, f64)> {
        let full = self.with_endpoints();
        let stride = full.len().div_ceil(max_points.max(2)).max(1);
        let mut out: Vec<(f64, f64)> =
            full.iter().enumerate().step_by(stride).map(|(i, &v)| (i as f64 * self.h, v)).collect();
        if !(full.len() - 1).is_multiple_of(stride) {
            if out.len() == max_points {
                out.pop();
            }
            out.push((1.0, *full.last().unwrap()));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn trapezoid_weights(n: usize, h: f64, free_ends: bool) -> Vec<f64> {
    let mut w = vec![h; n];
    if free_ends && n >= 2 {
        w[0] = 0.5 * h;
        w[n - 1] = 0.5 * h;
    }
    w
}

fn weighted_power_sum(values: &[f64], h: f64, free_ends: bool, power: i32) -> f64 {
    let n = values.len();
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = if free_ends && (i == 0 || i == n - 1) { 0.5 * h } else { h };
            w * v.powi(power)
        })
        .sum()
}

/// Linear interpolation of node values `full[i]` at `x_i = i h`.
pub fn interpolate(full: &[f64], h: f64, x: f64) -> f64 {
    let last = full.len() - 1;
    let s = (x / h).clamp(0.0, last as f64);
    let k = (s.floor() as usize).min(last.saturating_sub(1));
    let t = s - k as f64;
    (1.0 - t) * full[k] + t * full[k + 1]
}

/// Per-interval masses and energies of a wavefunction split at the scatterers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalOccupation {
    pub lengths: Vec<f64>,
    pub masses: Vec<f64>,
    pub per_interval_energy: Vec<f64>,
}

impl IntervalOccupation {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }
}
