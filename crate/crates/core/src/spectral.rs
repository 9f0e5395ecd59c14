//! Low spectrum of `-d^2/dz^2 + W` on `[0, 1]` with Dirichlet conditions,
//! where `W` is a sampled nonnegative function plus delta scatterers.
//!
//! Two independent methods: Sturm bisection on the same tridiagonal
//! discretization the GP solver uses, and shooting in the modified Prüfer
//! angle
//!
//! ```text
//! eta u = r cos(theta),  u' = -r sin(theta),
//! theta' = (E - W) cos^2(theta) / eta + eta sin^2(theta),
//! ```
//!
//! with `theta(0) = -pi/2` and eigenvalues at `theta(1) = pi/2 + j pi`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp_solver::scatterer_form;
use crate::model::{config_from_positions, interpolate, GridFunction, ScattererConfig, Strength};
use crate::tridiag::SymTridiagonal;

pub const MIN_SPECTRAL_GRID: usize = 64;
/// Absolute tolerance of the Sturm bisection.
pub const EIGENVALUE_TOLERANCE: f64 = 1e-10;
/// Tolerance in `E` of the shooting bisection.
pub const SHOOTING_TOLERANCE: f64 = 1e-8;
/// Runge-Kutta steps per grid cell in the Prüfer integration.
const RK_SUBSTEPS: usize = 4;
/// Default grid for shooting when the potential has no sampled part.
pub const SHOOTING_GRID: usize = 4095;
/// Diagonal entry that decouples a pinned node.
const PINNED_DIAGONAL: f64 = 1e30;

/// `W = smooth + sum_i sigma delta(z - z_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    /// Samples at `i / (len - 1)`, endpoints included. Empty means zero.
    pub smooth: Vec<f64>,
    pub deltas: ScattererConfig,
    pub integral_w: f64,
}

impl PotentialSpec {
    pub fn new(smooth: Vec<f64>, deltas: ScattererConfig) -> Result<Self> {
        if smooth.len() == 1 {
            return Err(Error::Domain("smooth part needs at least two samples".into()));
        }
        if smooth.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Domain("smooth part must be finite and nonnegative".into()));
        }
        let smooth_integral = if smooth.is_empty() {
            0.0
        } else {
            let h = 1.0 / (smooth.len() - 1) as f64;
            let n = smooth.len();
            h * (smooth.iter().sum::<f64>() - 0.5 * (smooth[0] + smooth[n - 1]))
        };
        let integral_w = smooth_integral + deltas.total_strength();
        Ok(PotentialSpec { smooth, deltas, integral_w })
    }

    /// `W = 0`.
    pub fn free() -> Self {
        PotentialSpec {
            smooth: Vec::new(),
            deltas: config_from_positions(&[], Strength::Finite(0.0)).expect("empty configuration is valid"),
            integral_w: 0.0,
        }
    }

    pub fn from_deltas(deltas: ScattererConfig) -> Self {
        PotentialSpec::new(Vec::new(), deltas).expect("empty smooth part is valid")
    }

    pub fn has_deltas(&self) -> bool {
        self.deltas.point_count() > 0 && self.deltas.strength().value() > 0.0
    }

    pub fn smooth_at(&self, z: f64) -> f64 {
        if self.smooth.is_empty() {
            return 0.0;
        }
        interpolate(&self.smooth, 1.0 / (self.smooth.len() - 1) as f64, z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
    pub eta: f64,
    pub gap_bound: f64,
    pub grid_points: usize,
    /// Largest distance an infinite-strength scatterer was moved to a node.
    pub snap_distance: f64,
}

/// The Hamiltonian on `m` interior nodes divided by the lumped mass `h`.
fn hamiltonian(potential: &PotentialSpec, m: usize) -> (SymTridiagonal, f64) {
    let h = 1.0 / (m + 1) as f64;
    let (mut q, pins, snap) = scatterer_form(&potential.deltas, m, h);
    for (i, s) in q.sites.iter_mut().enumerate() {
        *s += h * potential.smooth_at((i + 1) as f64 * h);
    }
    let mut t = q.to_tridiagonal();
    t.diag.iter_mut().for_each(|d| *d /= h);
    t.off.iter_mut().for_each(|o| *o /= h);
    for i in pins {
        t.diag[i] = PINNED_DIAGONAL;
        if i > 0 {
            t.off[i - 1] = 0.0;
        }
        if i + 1 < m {
            t.off[i] = 0.0;
        }
    }
    (t, snap)
}

/// Scatterers closer than this many cells are merged into one node.
const FITTED_MERGE_CELLS: f64 = 1e-2;

/// The Hamiltonian on a mesh fitted to the scatterers: the `m` uniform
/// nodes, with every node closer than `h/2` to a scatterer replaced by the
/// scatterer itself. Piecewise linear kinetic energy, lumped mass, deltas
/// exact at their nodes; hard walls remove their node.
fn fitted_hamiltonian(potential: &PotentialSpec, m: usize) -> SymTridiagonal {
    let h = 1.0 / (m + 1) as f64;
    let cfg = &potential.deltas;
    let mut sites: Vec<(f64, Strength)> = Vec::new();
    for i in 0..cfg.len() {
        let (z, s) = (cfg.positions()[i], cfg.site_strength(i));
        if s.value() == 0.0 || z < FITTED_MERGE_CELLS * h || z > 1.0 - FITTED_MERGE_CELLS * h {
            continue;
        }
        match sites.last_mut() {
            Some((last, t)) if z - *last < FITTED_MERGE_CELLS * h => {
                *t = match (*t, s) {
                    (Strength::Finite(a), Strength::Finite(b)) => Strength::Finite(a + b),
                    _ => Strength::Infinite,
                };
            }
            _ => sites.push((z, s)),
        }
    }
    let mut nodes: Vec<(f64, Strength)> = Vec::with_capacity(m + sites.len());
    let mut j = 0;
    for i in 1..=m {
        let x = i as f64 * h;
        while j < sites.len() && sites[j].0 <= x {
            nodes.push(sites[j]);
            j += 1;
        }
        let near_left = j > 0 && x - sites[j - 1].0 < 0.5 * h;
        let near_right = j < sites.len() && sites[j].0 - x < 0.5 * h;
        if !(near_left || near_right) {
            nodes.push((x, Strength::Finite(0.0)));
        }
    }
    nodes.extend_from_slice(&sites[j..]);
    let n = nodes.len();
    let x = |i: usize| -> f64 {
        match i {
            0 => 0.0,
            i if i == n + 1 => 1.0,
            i => nodes[i - 1].0,
        }
    };
    let mut diag = Vec::with_capacity(n);
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    let mut mass = Vec::with_capacity(n);
    for i in 1..=n {
        let (left, right) = (x(i) - x(i - 1), x(i + 1) - x(i));
        let w = 0.5 * (left + right);
        let sigma = match nodes[i - 1].1 {
            Strength::Finite(s) => s,
            Strength::Infinite => f64::INFINITY,
        };
        diag.push(1.0 / left + 1.0 / right + sigma + w * potential.smooth_at(x(i)));
        mass.push(w);
        if i < n {
            off.push(-1.0 / right);
        }
    }
    // Drop hard-wall nodes; the pieces on either side decouple.
    let mut t = SymTridiagonal::new(Vec::with_capacity(n), Vec::with_capacity(n));
    let mut coupled = false;
    for i in 0..n {
        if diag[i].is_infinite() {
            coupled = false;
            continue;
        }
        if !t.diag.is_empty() {
            t.off.push(if coupled { off[i - 1] / (mass[i - 1] * mass[i]).sqrt() } else { 0.0 });
        }
        t.diag.push(diag[i] / mass[i]);
        coupled = true;
    }
    t
}

/// Lowest `k` eigenvalues on a mesh of about `m` interior nodes fitted to
/// the scatterers (see [`fitted_hamiltonian`]).
pub fn eigs(potential: &PotentialSpec, k: usize, m: usize) -> Result<SpectrumResult> {
    if m < MIN_SPECTRAL_GRID {
        return Err(Error::Resolution { points: m, minimum: MIN_SPECTRAL_GRID });
    }
    if k > m {
        return Err(Error::Dimension { requested: k, size: m });
    }
    if k < 2 {
        return Err(Error::Domain(format!("need at least two eigenvalues, got k = {k}")));
    }
    let t = fitted_hamiltonian(potential, m);
    if k > t.len() {
        return Err(Error::Dimension { requested: k, size: t.len() });
    }
    let eigenvalues = t.lowest_eigenvalues(k, EIGENVALUE_TOLERANCE);
    Ok(spectrum(potential, eigenvalues, m, 0.0))
}

/// Lowest `k` eigenvalues on the uniform grid of the GP solver, where each
/// delta acts on the piecewise linear interpolant.
pub fn eigs_on_gp_grid(potential: &PotentialSpec, k: usize, m: usize) -> Result<SpectrumResult> {
    if k > m {
        return Err(Error::Dimension { requested: k, size: m });
    }
    if k < 2 {
        return Err(Error::Domain(format!("need at least two eigenvalues, got k = {k}")));
    }
    let (t, snap) = hamiltonian(potential, m);
    let eigenvalues = t.lowest_eigenvalues(k, EIGENVALUE_TOLERANCE);
    Ok(spectrum(potential, eigenvalues, m, snap))
}

/// [`eigs`] on `m` and `2m + 1` nodes, combined as `(4 e_fine - e_coarse) / 3`.
pub fn eigs_extrapolated(potential: &PotentialSpec, k: usize, m: usize) -> Result<SpectrumResult> {
    let coarse = eigs(potential, k, m)?;
    let fine = eigs(potential, k, 2 * m + 1)?;
    let eigenvalues = coarse.eigenvalues.iter().zip(&fine.eigenvalues).map(|(c, f)| (4.0 * f - c) / 3.0).collect();
    Ok(spectrum(potential, eigenvalues, fine.grid_points, fine.snap_distance))
}

fn spectrum(potential: &PotentialSpec, eigenvalues: Vec<f64>, m: usize, snap: f64) -> SpectrumResult {
    let (eta, gap_bound) = gap_lower_bound(potential.integral_w, potential.has_deltas());
    SpectrumResult {
        gap: eigenvalues[1] - eigenvalues[0],
        eigenvalues,
        eta,
        gap_bound,
        grid_points: m,
        snap_distance: snap,
    }
}

/// `eta = sqrt(pi^2 + 3 int W)` and the gap bound
/// `eta ln(1 + pi e^{-2 eta})`, or `eta ln(1 + e^{-2 eta})` with deltas.
pub fn gap_lower_bound(integral_w: f64, has_deltas: bool) -> (f64, f64) {
    let eta = (PI * PI + 3.0 * integral_w.max(0.0)).sqrt();
    if !eta.is_finite() {
        return (eta, 0.0);
    }
    let c = if has_deltas { 1.0 } else { PI };
    (eta, eta * (c * (-2.0 * eta).exp()).ln_1p())
}

/// `theta` after the jump `u' -> u' + s u`, kept on the branch of `theta`.
fn delta_jump(theta: f64, s: Strength, eta: f64) -> f64 {
    let branch = (theta / PI).round();
    let base = branch * PI;
    let local = theta - base;
    if local.abs() >= 0.5 * PI {
        return theta;
    }
    match s {
        Strength::Infinite => base - 0.5 * PI,
        Strength::Finite(s) => base + (local.tan() - s / eta).atan(),
    }
}

fn prufer_integrate(potential: &PotentialSpec, e: f64, m: usize, eta: f64) -> f64 {
    let steps_total = RK_SUBSTEPS * (m + 1);
    let rhs = |z: f64, th: f64| {
        let (s, c) = th.sin_cos();
        (e - potential.smooth_at(z)) * c * c / eta + eta * s * s
    };
    let cfg = &potential.deltas;
    let mut sites: Vec<(f64, Strength)> = (0..cfg.len()).map(|i| (cfg.positions()[i], cfg.site_strength(i))).collect();
    sites.retain(|(_, s)| s.value() > 0.0);
    let mut theta = -0.5 * PI;
    let mut z = 0.0;
    let mut next = 0;
    let mut boundaries: Vec<f64> = sites.iter().map(|(p, _)| *p).collect();
    boundaries.push(1.0);
    for stop in boundaries {
        let span = stop - z;
        if span > 0.0 {
            let n = ((span * steps_total as f64).ceil() as usize).max(1);
            let dz = span / n as f64;
            for i in 0..n {
                let x = z + i as f64 * dz;
                let k1 = rhs(x, theta);
                let k2 = rhs(x + 0.5 * dz, theta + 0.5 * dz * k1);
                let k3 = rhs(x + 0.5 * dz, theta + 0.5 * dz * k2);
                let k4 = rhs(x + dz, theta + dz * k3);
                theta += dz * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            }
            z = stop;
        }
        if next < sites.len() {
            theta = delta_jump(theta, sites[next].1, eta);
            next += 1;
        }
    }
    theta
}

fn eta_of(potential: &PotentialSpec) -> f64 {
    let eta = gap_lower_bound(potential.integral_w, false).0;
    if eta.is_finite() {
        eta
    } else {
        PI
    }
}

/// `theta(1, E)`, integrated with step `h / 4` on a grid of `m` interior nodes.
pub fn prufer_theta(potential: &PotentialSpec, e: f64, m: usize) -> f64 {
    prufer_integrate(potential, e, m, eta_of(potential))
}

fn shooting_grid(potential: &PotentialSpec) -> usize {
    SHOOTING_GRID.max(potential.smooth.len())
}

/// The lowest `k` eigenvalues from `theta(1, E) = pi/2 + j pi`.
pub fn eigs_by_shooting(potential: &PotentialSpec, k: usize) -> Result<Vec<f64>> {
    eigs_by_shooting_with(potential, k, shooting_grid(potential))
}

pub fn eigs_by_shooting_with(potential: &PotentialSpec, k: usize, m: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let eta = eta_of(potential);
    let theta = |e: f64| prufer_integrate(potential, e, m, eta);
    let mut out = Vec::with_capacity(k);
    let mut lo = 0.0;
    for j in 0..k {
        let target = 0.5 * PI + j as f64 * PI;
        let mut hi = (PI * (j + 1) as f64).powi(2).max(lo) * 2.0;
        let mut doublings = 0;
        while theta(hi) < target {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 200 {
                return Err(Error::Bracket(format!("no sign change for eigenvalue {j}")));
            }
        }
        let mut a = lo;
        let mut b = hi;
        while b - a > SHOOTING_TOLERANCE {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if theta(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let e = 0.5 * (a + b);
        out.push(e);
        lo = e;
    }
    Ok(out)
}

/// `h = -d^2 + V + gamma psi0^2 - (gamma/2) int psi0^4`, checked against
/// `psi0` as its ground state on the grid of `psi0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFieldHamiltonian {
    pub potential: PotentialSpec,
    pub shift: f64,
    /// Lowest eigenvalue of `h` including the shift.
    pub ground_energy: f64,
    /// `|h psi0 - e0 psi0| / (|e0| |psi0|)` with `e0` the Rayleigh quotient.
    pub residual: f64,
    pub cosine_similarity: f64,
}

/// Relative residual above which `psi0` is rejected as the ground state.
pub const MEAN_FIELD_TOLERANCE: f64 = 1e-5;

pub fn mean_field_hamiltonian(
    psi0: &GridFunction,
    config: &ScattererConfig,
    gamma: f64,
) -> Result<MeanFieldHamiltonian> {
    if psi0.free_ends {
        return Err(Error::Domain("mean-field Hamiltonian needs a Dirichlet grid function".into()));
    }
    let smooth: Vec<f64> = psi0.with_endpoints().iter().map(|p| gamma * p * p).collect();
    let potential = PotentialSpec::new(smooth, config.clone())?;
    let shift = -0.5 * gamma * psi0.quartic_integral();
    let m = psi0.values.len();
    let (t, _) = hamiltonian(&potential, m);
    let psi = &psi0.values;
    let mut hp = vec![0.0; m];
    t.apply(psi, &mut hp);
    let norm2: f64 = psi.iter().map(|p| p * p).sum();
    let rayleigh = psi.iter().zip(&hp).map(|(p, q)| p * q).sum::<f64>() / norm2;
    let res: f64 = hp.iter().zip(psi).map(|(q, p)| (q - rayleigh * p).powi(2)).sum::<f64>().sqrt();
    let residual = res / (rayleigh.abs().max(1.0) * norm2.sqrt());
    let lowest = t.eigenvalue(0, EIGENVALUE_TOLERANCE);
    let v = t.eigenvector(lowest, 8);
    let dot: f64 = v.iter().zip(psi).map(|(a, b)| a * b).sum();
    let cosine_similarity = dot.abs() / norm2.sqrt();
    if !(residual <= MEAN_FIELD_TOLERANCE) {
        return Err(Error::Consistency(format!(
            "psi0 is not an eigenfunction of the mean-field Hamiltonian (residual {residual:.3e})"
        )));
    }
    Ok(MeanFieldHamiltonian { potential, shift, ground_energy: lowest + shift, residual, cosine_similarity })
}

impl MeanFieldHamiltonian {
    /// Lowest `k` eigenvalues of `h` (shift included) on the grid of `psi0`.
    pub fn spectrum(&self, k: usize) -> Result<SpectrumResult> {
        let m = self.potential.smooth.len() - 2;
        let mut s = eigs_on_gp_grid(&self.potential, k, m)?;
        s.eigenvalues.iter_mut().for_each(|e| *e += self.shift);
        Ok(s)
    }
}

/// `c e0 / (ek - e0) N^{-1/3} min(sqrt(gamma), gamma)`, a bound on the
/// depletion up to the constant `c`.
pub fn depletion_bound(e0: f64, ek: f64, gamma: f64, n: f64, constant: f64) -> Result<f64> {
    if !(ek > e0) {
        return Err(Error::Domain(format!("need e_k > e_0, got e_0 = {e0}, e_k = {ek}")));
    }
    if !(n >= 1.0) {
        return Err(Error::Domain(format!("need N >= 1, got {n}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("need gamma >= 0, got {gamma}")));
    }
    Ok(constant * e0 / (ek - e0) * n.powf(-1.0 / 3.0) * gamma.sqrt().min(gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepletionRow {
    pub k: usize,
    pub ek: f64,
    pub bound: f64,
}

/// [`depletion_bound`] for `k = 1 .. len - 1` of a spectrum.
pub fn depletion_table(spectrum: &SpectrumResult, gamma: f64, n: f64, constant: f64) -> Result<Vec<DepletionRow>> {
    let e0 = spectrum.eigenvalues[0];
    spectrum.eigenvalues[1..]
        .iter()
        .enumerate()
        .map(|(i, &ek)| Ok(DepletionRow { k: i + 1, ek, bound: depletion_bound(e0, ek, gamma, n, constant)? }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_spectrum() {
        let s = eigs(&PotentialSpec::free(), 2, 4096).unwrap();
        assert!((s.eigenvalues[0] / (PI * PI) - 1.0).abs() < 1e-4);
        assert!((s.eigenvalues[1] / (4.0 * PI * PI) - 1.0).abs() < 1e-4);
        assert!((s.gap / (3.0 * PI * PI) - 1.0).abs() < 1e-4);
        assert!((s.gap_bound - 0.01845).abs() < 1e-4);
        assert!(s.gap >= s.gap_bound);
    }

    #[test]
    fn free_prufer_angles() {
        let p = PotentialSpec::free();
        assert!((prufer_theta(&p, PI * PI, 4095) - 0.5 * PI).abs() < 1e-6);
        assert!((prufer_theta(&p, 4.0 * PI * PI, 4095) - 1.5 * PI).abs() < 1e-6);
        let e = eigs_by_shooting(&p, 3).unwrap();
        for (j, v) in e.iter().enumerate() {
            let exact = (PI * (j + 1) as f64).powi(2);
            assert!((v / exact - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eta_examples() {
        assert!((gap_lower_bound(0.0, false).0 - PI).abs() < 1e-15);
        assert!((gap_lower_bound(10.0, true).0 - (PI * PI + 30.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn shooting_matches_bisection_with_one_delta() {
        let p = PotentialSpec::from_deltas(config_from_positions(&[0.3], Strength::Finite(50.0)).unwrap());
        let a = eigs(&p, 3, 8191).unwrap();
        let b = eigs_by_shooting(&p, 3).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b) {
            assert!((x / y - 1.0).abs() < 1e-4, "{x} {y}");
        }
    }

    #[test]
    fn depletion_examples() {
        let b = depletion_bound(PI * PI, 4.0 * PI * PI, 1.0, 1e6, 1.0).unwrap();
        assert!((b - 1.0 / 300.0).abs() < 1e-15);
        assert_eq!(depletion_bound(1.0, 2.0, 0.0, 10.0, 1.0).unwrap(), 0.0);
        assert!(depletion_bound(2.0, 2.0, 1.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn dimension_error() {
        assert!(matches!(eigs(&PotentialSpec::free(), 100, 64), Err(Error::Dimension { .. })));
    }
}
