//! The random GP functional
//!
//! ```text
//! E(psi) = int_0^1 |psi'|^2 + sigma sum_i delta(z - z_i) |psi|^2 + (gamma/2) |psi|^4
//! ```
//!
//! on a Dirichlet grid, its minimization, and the interval-decomposition
//! bounds obtained by splitting `psi` at the scatterers.
//!
//! The kinetic term is the exact energy of the piecewise linear interpolant,
//! and each delta is evaluated on that interpolant at the exact position.
//! Infinite strength snaps the scatterer to the nearest node and pins it.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aux_interval::{build_aux_table, kappa0_energy, solve_aux, AuxTable};
use crate::error::{Error, Result};
use crate::minimize::{minimize, MinimizerOptions, QuadraticForm, QuarticFunctional, RankOneBlock};
use crate::model::{
    build_grid, trapezoid_weights, GridFunction, IntervalOccupation, ModelParams, ScattererConfig, Strength,
};
use crate::thermo::{hard_wall_table, nbar, nbar_and_g, solve_mu};

/// Points per decade of the downward `alpha` quantization in the lower bound.
pub const ALPHA_STEPS_PER_DECADE: f64 = 16.0;
const ALPHA_FLOOR: f64 = 1e-2;
const ALPHA_CEIL: f64 = 1e6;
const LOWER_MU_GRID: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpOptions {
    pub random_starts: usize,
    pub seed: u64,
    pub thermo_start: bool,
    /// Solve again on `(M - 1) / 2` nodes to estimate the grid error.
    pub estimate_error: bool,
    pub bounds: bool,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions { random_starts: 3, seed: 0, thermo_start: true, estimate_error: true, bounds: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GPResult {
    pub energy: f64,
    pub minimizer: GridFunction,
    pub occupations: IntervalOccupation,
    pub participation_ratio: f64,
    /// Thermodynamic choice of masses on the interior intervals.
    pub upper_bound: Option<f64>,
    /// Upper bound with the masses optimized over all intervals.
    pub upper_bound_optimized: Option<f64>,
    pub lower_bound: Option<f64>,
    /// Richardson estimate of the grid error in `energy`.
    pub discretization_error: f64,
    /// Largest distance a scatterer was moved to sit on a node.
    pub snap_distance: f64,
    pub mu: Option<f64>,
    pub start_energies: Vec<f64>,
    pub iterations: usize,
}

/// Kinetic energy plus the deltas of `config` on `m` interior nodes, the
/// pinned (infinite-strength) nodes and the largest snap distance.
pub fn scatterer_form(config: &ScattererConfig, m: usize, h: f64) -> (QuadraticForm, Vec<usize>, f64) {
    let mut q = QuadraticForm::kinetic(m, h, true);
    let mut pins = Vec::new();
    let mut snap: f64 = 0.0;
    for (i, &z) in config.positions().iter().enumerate() {
        match config.site_strength(i) {
            Strength::Infinite => {
                let node = (z / h).round() as usize;
                snap = snap.max((z - node as f64 * h).abs());
                if node >= 1 && node <= m {
                    pins.push(node - 1);
                }
            }
            Strength::Finite(s) => {
                if s == 0.0 {
                    continue;
                }
                let x = z / h;
                let k = (x.floor() as usize).min(m);
                let t = x - k as f64;
                // psi(z) = (1 - t) psi_k + t psi_{k+1} on the full node list,
                // whose ends 0 and m + 1 are the implied zeros.
                let block = if k == 0 {
                    RankOneBlock { k: 0, a: t, b: 0.0, strength: s }
                } else if k == m {
                    RankOneBlock { k: m - 1, a: 1.0 - t, b: 0.0, strength: s }
                } else {
                    RankOneBlock { k: k - 1, a: 1.0 - t, b: t, strength: s }
                };
                q.blocks.push(block);
            }
        }
    }
    (q, pins, snap)
}

/// The discretized GP functional and the snap distance used for infinite strength.
pub fn gp_functional(config: &ScattererConfig, params: &ModelParams) -> Result<(QuarticFunctional, f64)> {
    let grid = build_grid(params.grid_points)?;
    let (m, h) = (grid.m, grid.h);
    let (q, pins, snap) = scatterer_form(config, m, h);
    let mut f = QuarticFunctional::new(q, trapezoid_weights(m, h, false), params.gamma);
    for i in pins {
        f.pin(i);
    }
    Ok((f, snap))
}

/// `E(psi)` for a Dirichlet grid function. Infinite-strength deltas
/// contribute nothing (the constraint is enforced by pinning).
pub fn assemble_energy(psi: &GridFunction, config: &ScattererConfig, params: &ModelParams) -> f64 {
    let full = psi.with_endpoints();
    let h = psi.h;
    let kinetic: f64 = full.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / h;
    let mut delta = 0.0;
    for (i, &z) in config.positions().iter().enumerate() {
        if let Strength::Finite(s) = config.site_strength(i) {
            delta += s * psi.value_at(z).powi(2);
        }
    }
    kinetic + delta + 0.5 * params.gamma * psi.quartic_integral()
}

/// Cell `k` of the full node list containing `z`, and the fraction `t` of
/// the cell to the left of `z`.
fn locate(z: f64, h: f64, cells: usize) -> (usize, f64) {
    let x = z / h;
    let k = (x.floor() as usize).min(cells - 1);
    (k, (x - k as f64).clamp(0.0, 1.0))
}

/// `int_{x_k}^{x_k + t h} (linear interpolant of r)` over cell `k`.
fn partial_cell(r: &[f64], k: usize, t: f64, h: f64) -> f64 {
    h * (t * r[k] + 0.5 * t * t * (r[k + 1] - r[k]))
}

/// Integral of the interpolant of node values `r` between `a` and `b`.
fn piecewise_integral(r: &[f64], h: f64, a: f64, b: f64) -> f64 {
    let cells = r.len() - 1;
    let cumulative = |z: f64| -> f64 {
        let (k, t) = locate(z, h, cells);
        let whole: f64 = (0..k).map(|c| 0.5 * h * (r[c] + r[c + 1])).sum();
        whole + partial_cell(r, k, t, h)
    };
    cumulative(b) - cumulative(a)
}

/// Masses `n_j` in each gap and the participation ratio `1/((m+1) sum n_j^2)`.
pub fn localization_metrics(psi: &GridFunction, config: &ScattererConfig) -> (IntervalOccupation, f64) {
    let occ = split_energy(psi, config, &ModelParams::default(), false);
    let pr = participation_ratio(&occ.masses);
    (occ, pr)
}

pub fn participation_ratio(masses: &[f64]) -> f64 {
    let total: f64 = masses.iter().sum();
    let sq: f64 = masses.iter().map(|n| (n / total).powi(2)).sum();
    1.0 / (masses.len() as f64 * sq)
}

/// Split `psi` at the scatterers. With `energies`, each gap also gets
/// `(n_j / l_j^2) E_{n_j l_j gamma, l_j sigma}[psi_j]` for the rescaled
/// restriction `psi_j(x) = sqrt(l_j / n_j) psi(z_j + l_j x)`.
pub fn split_energy(
    psi: &GridFunction,
    config: &ScattererConfig,
    params: &ModelParams,
    energies: bool,
) -> IntervalOccupation {
    let full = psi.with_endpoints();
    let h = psi.h;
    let rho: Vec<f64> = full.iter().map(|v| v * v).collect();
    let quartic: Vec<f64> = full.iter().map(|v| v.powi(4)).collect();
    let slopes: Vec<f64> = full.windows(2).map(|w| ((w[1] - w[0]) / h).powi(2)).collect();
    let kinetic_between = |a: f64, b: f64| -> f64 {
        let cells = slopes.len();
        let cumulative = |z: f64| -> f64 {
            let (k, t) = locate(z, h, cells);
            slopes[..k].iter().sum::<f64>() * h + slopes[k] * t * h
        };
        cumulative(b) - cumulative(a)
    };

    let m = config.len();
    let mut lengths = Vec::with_capacity(m + 1);
    let mut masses = Vec::with_capacity(m + 1);
    let mut per_interval_energy = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let (a, b) = config.gap_bounds(j);
        let l = config.gaps()[j];
        let n = piecewise_integral(&rho, h, a, b);
        lengths.push(l);
        masses.push(n);
        if !energies {
            continue;
        }
        if n <= 0.0 {
            per_interval_energy.push(0.0);
            continue;
        }
        // Pieces of the rescaled single-interval functional.
        let scale = l / n;
        let kinetic = scale * l * kinetic_between(a, b);
        let quart = scale * scale / l * piecewise_integral(&quartic, h, a, b);
        let kappa = n * l * params.gamma;
        let mut boundary = 0.0;
        for (site, z) in [(j.checked_sub(1), a), ((j < m).then_some(j), b)] {
            if let Some(i) = site {
                if let Strength::Finite(s) = config.site_strength(i) {
                    // Each side of a shared delta carries half of it.
                    let alpha = l * s;
                    boundary += 0.5 * alpha * scale * psi.value_at(z).powi(2);
                }
            }
        }
        let aux = kinetic + boundary + 0.5 * kappa * quart;
        per_interval_energy.push(n / (l * l) * aux);
    }
    IntervalOccupation { lengths, masses, per_interval_energy }
}

/// Piecewise start built from single-interval minimizers with the
/// thermodynamic masses.
fn thermo_start(config: &ScattererConfig, params: &ModelParams, mu: f64) -> Result<Option<Vec<f64>>> {
    let grid = build_grid(params.grid_points)?;
    let table = hard_wall_table();
    let mut values = vec![0.0; grid.m];
    let mut any = false;
    for j in 0..=config.len() {
        let (a, b) = config.gap_bounds(j);
        let l = config.gaps()[j];
        let nb = nbar(mu * l * l, table)?;
        if nb == 0.0 {
            continue;
        }
        let mass = nb / (l * params.gamma);
        let shape = solve_aux(nb, Strength::Infinite, 63)?.minimizer;
        let amp = (mass / l).sqrt();
        for (i, v) in values.iter_mut().enumerate() {
            let x = grid.node(i + 1);
            if x > a && x < b {
                *v = amp * shape.value_at((x - a) / l);
                any = true;
            }
        }
    }
    Ok(any.then_some(values))
}

fn minimizer_options(params: &ModelParams) -> MinimizerOptions {
    MinimizerOptions {
        tol_energy: params.tol_energy,
        tol_root: params.tol_root,
        max_iter: params.max_iter,
        ..Default::default()
    }
}

pub fn minimize_gp(config: &ScattererConfig, params: &ModelParams) -> Result<GPResult> {
    minimize_gp_with(config, params, &GpOptions::default())
}

pub fn minimize_gp_with(config: &ScattererConfig, params: &ModelParams, opts: &GpOptions) -> Result<GPResult> {
    params.validate()?;
    let (f, snap) = gp_functional(config, params)?;
    let grid = build_grid(params.grid_points)?;
    let mopts = minimizer_options(params);

    let mu = if params.gamma > 0.0 { Some(solve_mu(params.gamma, params.nu, hard_wall_table())?) } else { None };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push((1..=grid.m).map(|i| (PI * grid.node(i)).sin()).collect());
    if opts.thermo_start {
        if let Some(mu) = mu {
            if let Some(s) = thermo_start(config, params, mu)? {
                starts.push(s);
            }
        }
    }
    for r in 0..opts.random_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64 + 1);
        starts.push((1..=grid.m).map(|i| (PI * grid.node(i)).sin() * rng.gen_range(0.05..1.0)).collect());
    }

    let mut best: Option<(crate::minimize::Minimum, usize)> = None;
    let mut start_energies = Vec::with_capacity(starts.len());
    let mut iterations = 0;
    let mut last_err = None;
    for (idx, s) in starts.iter().enumerate() {
        match minimize(&f, s, &mopts) {
            Ok(min) => {
                iterations += min.iterations;
                start_energies.push(min.energy);
                let better = best.as_ref().is_none_or(|(b, _)| min.energy < b.energy);
                if better {
                    best = Some((min, idx));
                }
            }
            Err(e) => {
                start_energies.push(f64::NAN);
                last_err = Some(e);
            }
        }
    }
    let (min, _) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::Degenerate("no start converged".into()))),
    };

    let minimizer = GridFunction::dirichlet(min.values.clone());
    let energy = min.energy;

    let discretization_error = if opts.estimate_error && grid.m > 2 * crate::model::MIN_GRID_POINTS {
        let coarse_m = (grid.m - 1) / 2;
        let coarse_params = params.clone().with_grid(coarse_m);
        let (fc, _) = gp_functional(config, &coarse_params)?;
        let restricted: Vec<f64> = (0..coarse_m).map(|j| min.values[2 * j + 1]).collect();
        let coarse = minimize(&fc, &restricted, &mopts)?;
        (coarse.energy - energy).abs()
    } else {
        0.0
    };

    let (occupations, participation_ratio) = {
        let occ = split_energy(&minimizer, config, params, true);
        let pr = participation_ratio(&occ.masses);
        (occ, pr)
    };

    let (upper_bound, upper_bound_optimized, lower_bound) = if opts.bounds {
        // With no interior gap above threshold the thermodynamic masses are
        // all zero; the optimized bound is still defined.
        let upper = match decomposition_upper(config, params, hard_wall_table(), mu) {
            Err(Error::Degenerate(_)) => decomposition_upper(config, params, hard_wall_table(), None)?,
            other => other?,
        };
        let lower = decomposition_lower(config, params, mu)?;
        let thermo = upper.thermodynamic.unwrap_or(upper.optimized);
        (Some(thermo), Some(upper.optimized), Some(lower.value))
    } else {
        (None, None, None)
    };

    Ok(GPResult {
        energy,
        minimizer,
        occupations,
        participation_ratio,
        upper_bound,
        upper_bound_optimized,
        lower_bound,
        discretization_error,
        snap_distance: snap,
        mu,
        start_energies,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    /// `sum_j (n_j / (N l_j^2)) e(n_j l_j gamma / N, inf)` with the
    /// thermodynamic masses; `None` without a chemical potential.
    pub thermodynamic: Option<f64>,
    /// `N = sum n_j` before renormalization.
    pub normalization: Option<f64>,
    /// Infimum over all mass distributions.
    pub optimized: f64,
    /// Optimal masses, one per gap.
    pub optimized_masses: Vec<f64>,
}

/// Indices of the gaps used by the thermodynamic upper bound: the interior
/// gaps, or all gaps when there are none.
fn upper_gaps(config: &ScattererConfig) -> Vec<usize> {
    let m = config.len();
    if m >= 2 {
        (1..m).collect()
    } else {
        (0..=m).collect()
    }
}

/// `(1 / l^2) n e(n l gamma)` for `n` in gap of length `l`.
fn gap_energy(n: f64, l: f64, gamma: f64, table: &AuxTable) -> Result<f64> {
    if n == 0.0 {
        return Ok(0.0);
    }
    Ok(n / (l * l) * table.lookup(n * l * gamma)?.0)
}

pub fn decomposition_upper(
    config: &ScattererConfig,
    params: &ModelParams,
    table: &AuxTable,
    mu: Option<f64>,
) -> Result<UpperBound> {
    let gamma = params.gamma;
    let gaps = config.gaps();

    let (thermodynamic, normalization) = match mu {
        Some(mu) if gamma > 0.0 => {
            let idx = upper_gaps(config);
            let masses: Vec<f64> = idx
                .iter()
                .map(|&j| -> Result<f64> {
                    let l = gaps[j];
                    Ok(nbar(mu * l * l, table)? / (l * gamma))
                })
                .collect::<Result<_>>()?;
            let total: f64 = masses.iter().sum();
            if total == 0.0 {
                return Err(Error::Degenerate(format!("no gap satisfies mu l^2 > e(0, inf) at mu = {mu}")));
            }
            let mut e = 0.0;
            for (&j, &n) in idx.iter().zip(&masses) {
                e += gap_energy(n / total, gaps[j], gamma, table)?;
            }
            (Some(e), Some(total))
        }
        _ => (None, None),
    };

    let (optimized, optimized_masses) = optimal_masses(gaps, &vec![table; gaps.len()], gamma)?;
    Ok(UpperBound { thermodynamic, normalization, optimized, optimized_masses })
}

/// `inf { sum_j (n_j/l_j^2) e(n_j l_j gamma, alpha_j) : sum n_j = 1 }` by
/// its optimality condition `n_j = nbar(mu l_j^2) / (l_j gamma)`.
fn optimal_masses(gaps: &[f64], tables: &[&AuxTable], gamma: f64) -> Result<(f64, Vec<f64>)> {
    if gamma == 0.0 {
        let (best, _) = gaps
            .iter()
            .zip(tables)
            .enumerate()
            .map(|(j, (l, t))| (t.e0() / (l * l), j))
            .fold((f64::INFINITY, 0), |acc, x| if x.0 < acc.0 { x } else { acc });
        let j = gaps.iter().zip(tables).position(|(l, t)| t.e0() / (l * l) == best).unwrap_or(0);
        let mut masses = vec![0.0; gaps.len()];
        masses[j] = 1.0;
        return Ok((best, masses));
    }
    let mass = |mu: f64| -> Result<f64> {
        let mut s = 0.0;
        for (l, t) in gaps.iter().zip(tables) {
            s += nbar(mu * l * l, t)? / (l * gamma);
        }
        Ok(s)
    };
    let mut hi = gaps.iter().zip(tables).map(|(l, t)| t.e0() / (l * l)).fold(f64::INFINITY, f64::min).max(1e-12);
    let mut lo = hi;
    let mut steps = 0;
    while mass(hi)? < 1.0 {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(Error::Bracket("no mu normalizes the optimal masses".into()));
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
    let mu = 0.5 * (lo + hi);
    let mut masses = Vec::with_capacity(gaps.len());
    for (l, t) in gaps.iter().zip(tables) {
        masses.push(nbar(mu * l * l, t)? / (l * gamma));
    }
    let total: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|n| *n /= total);
    let mut e = 0.0;
    for ((l, t), &n) in gaps.iter().zip(tables).zip(&masses) {
        e += gap_energy(n, *l, gamma, t)?;
    }
    Ok((e, masses))
}

/// `alpha` rounded down onto the log grid used for cached tables; `None`
/// stands for the hard wall.
pub fn quantize_alpha(alpha: Strength) -> Strength {
    match alpha {
        Strength::Infinite => Strength::Infinite,
        Strength::Finite(a) if a < ALPHA_FLOOR => Strength::Finite(0.0),
        Strength::Finite(a) => {
            let a = a.min(ALPHA_CEIL);
            let i = (a.log10() * ALPHA_STEPS_PER_DECADE + 1e-9).floor();
            Strength::Finite(10f64.powf(i / ALPHA_STEPS_PER_DECADE).min(a))
        }
    }
}

/// Cached table for a quantized `alpha`.
pub fn alpha_table(alpha: Strength) -> Arc<AuxTable> {
    type Slot = Arc<OnceLock<Arc<AuxTable>>>;
    static CACHE: OnceLock<Mutex<HashMap<String, Slot>>> = OnceLock::new();
    let alpha = quantize_alpha(alpha);
    let slot = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry(alpha.to_string()).or_default().clone()
    };
    slot.get_or_init(|| {
        let table = match alpha {
            Strength::Infinite => hard_wall_table().clone(),
            a => build_aux_table(a, 1e3, 48).expect("finite-alpha table builds"),
        };
        Arc::new(table)
    })
    .clone()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub mu: f64,
}

/// `alpha_j` for the lower bound: the two domain ends are hard walls, so a
/// gap with no scatterer on either side is a hard-wall interval.
fn lower_alpha(config: &ScattererConfig, j: usize) -> Strength {
    if config.is_empty() {
        return Strength::Infinite;
    }
    config.strength().scaled(config.gaps()[j])
}

/// `sup_mu [ mu + sum_j g(mu l_j^2, alpha_j) / (gamma l_j^3) ]`; every `mu`
/// gives a valid bound, the best one found is returned.
pub fn decomposition_lower(config: &ScattererConfig, params: &ModelParams, mu_hint: Option<f64>) -> Result<LowerBound> {
    let gaps = config.gaps();
    let gamma = params.gamma;
    let tables: Vec<Arc<AuxTable>> = (0..gaps.len()).map(|j| alpha_table(lower_alpha(config, j))).collect();
    let refs: Vec<&AuxTable> = tables.iter().map(|t| t.as_ref()).collect();
    if gamma == 0.0 {
        let best = gaps.iter().zip(&refs).map(|(l, t)| t.e0() / (l * l)).fold(f64::INFINITY, f64::min);
        return Ok(LowerBound { value: best, mu: best });
    }
    let dual = |mu: f64| -> Result<f64> {
        let mut s = mu;
        for (l, t) in gaps.iter().zip(&refs) {
            s += nbar_and_g(mu * l * l, t)?.1 / (gamma * l * l * l);
        }
        Ok(s)
    };
    let excess = |mu: f64| -> Result<f64> {
        let mut s = 0.0;
        for (l, t) in gaps.iter().zip(&refs) {
            s += nbar(mu * l * l, t)? / (l * gamma);
        }
        Ok(s - 1.0)
    };

    let mut best = LowerBound { value: f64::NEG_INFINITY, mu: 0.0 };
    let mut consider = |mu: f64| -> Result<()> {
        let v = dual(mu)?;
        if v > best.value {
            best = LowerBound { value: v, mu };
        }
        Ok(())
    };

    // The dual is concave with slope 1 - sum nbar/(l gamma); its maximizer
    // is the root of that slope.
    let floor = gaps.iter().zip(&refs).map(|(l, t)| t.e0() / (l * l)).fold(f64::INFINITY, f64::min).max(1e-12);
    let (mut lo, mut hi) = (floor, floor);
    let mut steps = 0;
    while excess(hi)? < 0.0 && steps < 200 {
        lo = hi;
        hi *= 2.0;
        steps += 1;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    consider(root)?;

    let centre = mu_hint.unwrap_or(root);
    for i in 0..LOWER_MU_GRID {
        let s = i as f64 / (LOWER_MU_GRID - 1) as f64;
        consider(centre * 10f64.powf(-1.0 + 2.0 * s))?;
    }
    Ok(best)
}

/// `e(0, alpha) / l^2` convenience for tests and reports.
pub fn gap_ground_energy(l: f64, alpha: Strength) -> f64 {
    kappa0_energy(alpha) / (l * l)
}
