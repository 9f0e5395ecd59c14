//! Minimization of discrete quartic functionals on the weighted unit sphere.
//!
//! Both the auxiliary single-interval problem and the full random GP problem
//! reduce to
//!
//! ```text
//! E(phi) = phi^T A phi + (q/2) sum_i w_i phi_i^4,   sum_i w_i phi_i^2 = 1,
//! ```
//!
//! with `A` symmetric tridiagonal and `w` trapezoid weights. The minimizer is
//! a projected gradient descent on the sphere: each step takes the
//! sphere-projected gradient, preconditions it with a tridiagonal solve,
//! adds a Polak-Ribiere momentum term, and renormalizes after a monotone
//! backtracking line search.

use crate::error::{Error, Result};
use crate::tridiag::SymTridiagonal;

/// Quadratic form written as a sum of nonnegative pieces so that its value
/// and gradient are evaluated without cancellation:
///
/// ```text
/// Q(phi) = sum_k bond_k (phi_{k+1} - phi_k)^2 + sum_i site_i phi_i^2
///        + sum_j s_j (a_j phi_{k_j} + b_j phi_{k_j+1})^2
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub bonds: Vec<f64>,
    pub sites: Vec<f64>,
    pub blocks: Vec<RankOneBlock>,
}

/// `strength * (a phi_k + b phi_{k+1})^2`; `b` is ignored when `k` is the last index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOneBlock {
    pub k: usize,
    pub a: f64,
    pub b: f64,
    pub strength: f64,
}

impl QuadraticForm {
    pub fn new(n: usize) -> Self {
        QuadraticForm { bonds: vec![0.0; n.saturating_sub(1)], sites: vec![0.0; n], blocks: Vec::new() }
    }

    /// Kinetic energy `sum (Delta phi)^2 / h` on `n` unknowns; with
    /// `dirichlet` the implied zero endpoints add `phi^2/h` at both ends.
    pub fn kinetic(n: usize, h: f64, dirichlet: bool) -> Self {
        let mut q = QuadraticForm::new(n);
        q.bonds.iter_mut().for_each(|b| *b = 1.0 / h);
        if dirichlet {
            q.sites[0] += 1.0 / h;
            q.sites[n - 1] += 1.0 / h;
        }
        q
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    fn block_pair(&self, blk: &RankOneBlock, phi: &[f64]) -> f64 {
        let next = if blk.k + 1 < phi.len() { blk.b * phi[blk.k + 1] } else { 0.0 };
        blk.a * phi[blk.k] + next
    }

    pub fn value(&self, phi: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, &c) in self.bonds.iter().enumerate() {
            let d = phi[k + 1] - phi[k];
            s += c * d * d;
        }
        for (i, &c) in self.sites.iter().enumerate() {
            s += c * phi[i] * phi[i];
        }
        for blk in &self.blocks {
            let v = self.block_pair(blk, phi);
            s += blk.strength * v * v;
        }
        s
    }

    /// `out = A phi` where `Q(phi) = phi^T A phi`.
    pub fn apply(&self, phi: &[f64], out: &mut [f64]) {
        let n = phi.len();
        for i in 0..n {
            out[i] = self.sites[i] * phi[i];
        }
        for (k, &c) in self.bonds.iter().enumerate() {
            let d = c * (phi[k + 1] - phi[k]);
            out[k] -= d;
            out[k + 1] += d;
        }
        for blk in &self.blocks {
            let v = blk.strength * self.block_pair(blk, phi);
            out[blk.k] += blk.a * v;
            if blk.k + 1 < n {
                out[blk.k + 1] += blk.b * v;
            }
        }
    }

    /// The symmetric tridiagonal matrix `A`.
    pub fn to_tridiagonal(&self) -> SymTridiagonal {
        let n = self.len();
        let mut t = SymTridiagonal::new(self.sites.clone(), vec![0.0; n.saturating_sub(1)]);
        for (k, &c) in self.bonds.iter().enumerate() {
            t.diag[k] += c;
            t.diag[k + 1] += c;
            t.off[k] -= c;
        }
        for blk in &self.blocks {
            t.diag[blk.k] += blk.strength * blk.a * blk.a;
            if blk.k + 1 < n {
                t.diag[blk.k + 1] += blk.strength * blk.b * blk.b;
                t.off[blk.k] += blk.strength * blk.a * blk.b;
            }
        }
        t
    }
}

/// Discrete functional `Q(phi) + (q/2) sum w phi^4` with optional
/// pinned (Dirichlet) unknowns.
#[derive(Debug, Clone)]
pub struct QuarticFunctional {
    pub quadratic: QuadraticForm,
    pub weights: Vec<f64>,
    pub quartic: f64,
    pub pinned: Vec<bool>,
}

impl QuarticFunctional {
    pub fn new(quadratic: QuadraticForm, weights: Vec<f64>, quartic: f64) -> Self {
        let n = weights.len();
        assert_eq!(quadratic.len(), n);
        QuarticFunctional { quadratic, weights, quartic, pinned: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn pin(&mut self, i: usize) {
        self.pinned[i] = true;
    }

    pub fn norm_sq(&self, phi: &[f64]) -> f64 {
        phi.iter().zip(&self.weights).map(|(p, w)| w * p * p).sum()
    }

    pub fn quartic_sum(&self, phi: &[f64]) -> f64 {
        phi.iter().zip(&self.weights).map(|(p, w)| w * p.powi(4)).sum()
    }

    pub fn energy(&self, phi: &[f64]) -> f64 {
        self.quadratic.value(phi) + 0.5 * self.quartic * self.quartic_sum(phi)
    }

    /// Euclidean gradient of [`energy`](Self::energy) with respect to the
    /// stored values; zero in pinned components.
    pub fn gradient(&self, phi: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; phi.len()];
        self.half_gradient(phi, &mut g);
        g.iter_mut().for_each(|v| *v *= 2.0);
        g
    }

    fn half_gradient(&self, phi: &[f64], out: &mut [f64]) {
        self.quadratic.apply(phi, out);
        for i in 0..phi.len() {
            if self.pinned[i] {
                out[i] = 0.0;
            } else {
                out[i] += self.quartic * self.weights[i] * phi[i].powi(3);
            }
        }
    }

    /// Scale `phi` to unit weighted norm and zero the pinned entries.
    pub fn project(&self, phi: &mut [f64]) {
        for (v, &p) in phi.iter_mut().zip(&self.pinned) {
            if p {
                *v = 0.0;
            }
        }
        let n = self.norm_sq(phi).sqrt();
        if n > 0.0 {
            phi.iter_mut().for_each(|v| *v /= n);
        }
    }

    /// Largest `A_ii / w_i` over the free nodes.
    fn stiffness(&self) -> f64 {
        let a = self.quadratic.to_tridiagonal();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            if !self.pinned[i] {
                worst = worst.max(a.diag[i].abs() / self.weights[i]);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizerOptions {
    pub tol_energy: f64,
    pub tol_root: f64,
    pub max_iter: usize,
    /// Number of consecutive small-decrease steps required to stop.
    pub stall_window: usize,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        MinimizerOptions { tol_energy: 1e-10, tol_root: 1e-8, max_iter: 20_000, stall_window: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub values: Vec<f64>,
    pub energy: f64,
    /// Lagrange multiplier `phi^T A phi + q sum w phi^4`.
    pub chemical_potential: f64,
    pub iterations: usize,
    /// Weighted norm of the sphere-projected gradient at the end.
    pub residual: f64,
    /// Whether every accepted step lowered the energy.
    pub monotone: bool,
}

struct State {
    energy: f64,
    lambda: f64,
    residual: Vec<f64>,
    residual_norm: f64,
}

fn evaluate(f: &QuarticFunctional, phi: &[f64], scratch: &mut [f64]) -> State {
    f.half_gradient(phi, scratch);
    let lambda: f64 = phi.iter().zip(scratch.iter()).map(|(p, g)| p * g).sum();
    let mut residual = vec![0.0; phi.len()];
    let mut norm = 0.0;
    for i in 0..phi.len() {
        if !f.pinned[i] {
            let r = scratch[i] - lambda * f.weights[i] * phi[i];
            residual[i] = r;
            norm += r * r / f.weights[i];
        }
    }
    State { energy: f.energy(phi), lambda, residual, residual_norm: norm.sqrt() }
}

fn preconditioner(f: &QuarticFunctional, phi: &[f64], shift: f64) -> SymTridiagonal {
    let mut p = f.quadratic.to_tridiagonal();
    let n = f.len();
    for i in 0..n {
        if f.pinned[i] {
            p.diag[i] = 1.0;
            if i > 0 {
                p.off[i - 1] = 0.0;
            }
            if i + 1 < n {
                p.off[i] = 0.0;
            }
        } else {
            p.diag[i] += f.weights[i] * (3.0 * f.quartic * phi[i] * phi[i] + shift);
        }
    }
    p
}

/// Remove the component along `phi` (weighted inner product) and zero pins.
fn tangent(f: &QuarticFunctional, phi: &[f64], d: &mut [f64]) {
    let mut dot = 0.0;
    for i in 0..d.len() {
        if f.pinned[i] {
            d[i] = 0.0;
        }
        dot += f.weights[i] * phi[i] * d[i];
    }
    for i in 0..d.len() {
        if !f.pinned[i] {
            d[i] -= dot * phi[i];
        }
    }
}

fn retract(f: &QuarticFunctional, phi: &[f64], d: &[f64], tau: f64) -> Vec<f64> {
    let mut out: Vec<f64> = phi.iter().zip(d).map(|(p, q)| p + tau * q).collect();
    f.project(&mut out);
    out
}

const SAFE_SHIFT: f64 = 0.05;
const NEWTON_SHIFT: f64 = 1e-3;

/// Minimize `f` on the weighted unit sphere starting from `initial`.
pub fn minimize(f: &QuarticFunctional, initial: &[f64], opts: &MinimizerOptions) -> Result<Minimum> {
    let n = f.len();
    let mut phi = initial.to_vec();
    f.project(&mut phi);
    if !(f.norm_sq(&phi) > 0.0) {
        return Err(Error::Domain("initial guess vanishes on the free nodes".into()));
    }

    let stiffness = f.stiffness();
    let floor = 64.0 * f64::EPSILON * stiffness;
    let rounding = 64.0 * f64::EPSILON * (n as f64).sqrt() * stiffness;
    let mut scratch = vec![0.0; n];
    let mut state = evaluate(f, &phi, &mut scratch);
    let mut monotone = true;
    let mut small_steps = 0usize;
    let mut tau = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None; // (residual, direction, z.r)

    for iter in 0..opts.max_iter {
        // Relative to the chemical potential: below roughly eps * lambda * E
        // the energy can no longer resolve a descent step.
        let tol_residual = (opts.tol_root * (1.0 + state.lambda.abs())).max(floor);
        if state.residual_norm <= tol_residual && small_steps >= opts.stall_window {
            return Ok(finish(f, phi, state, iter, monotone));
        }

        // Near a minimum the shifted Hessian A + W(3 q phi^2 - lambda) is
        let scale = state.lambda.abs() + 1.0;
        // positive on the tangent space and resolves the slow modes. Away
        // from a minimum (a negative eigenvalue, e.g. near a saddle) use a
        // safely positive shift instead.
        let newton = preconditioner(f, &phi, -state.lambda + NEWTON_SHIFT * scale);
        let mut z = vec![0.0; n];
        let mut zr = f64::NAN;
        if newton.sturm_count(0.0) == 0 {
            z = newton.solve(&state.residual);
            tangent(f, &phi, &mut z);
            zr = z.iter().zip(&state.residual).map(|(a, b)| a * b).sum();
        }
        if !(zr > 0.0) || !z.iter().all(|v| v.is_finite()) {
            z = preconditioner(f, &phi, SAFE_SHIFT * scale).solve(&state.residual);
            tangent(f, &phi, &mut z);
            zr = z.iter().zip(&state.residual).map(|(a, b)| a * b).sum();
        }

        let mut d: Vec<f64> = z.iter().map(|v| -v).collect();
        if let Some((r_prev, d_prev, zr_prev)) = &prev {
            if *zr_prev > 0.0 {
                let num: f64 =
                    z.iter().zip(state.residual.iter().zip(r_prev)).map(|(zi, (ri, rpi))| zi * (ri - rpi)).sum();
                let beta = (num / zr_prev).max(0.0);
                if beta > 0.0 {
                    let mut dp = d_prev.clone();
                    tangent(f, &phi, &mut dp);
                    for i in 0..n {
                        d[i] += beta * dp[i];
                    }
                }
            }
        }
        let mut slope: f64 = 2.0 * d.iter().zip(&state.residual).map(|(a, b)| a * b).sum::<f64>();
        if !(slope < 0.0) {
            d = z.iter().map(|v| -v).collect();
            slope = -2.0 * zr;
        }

        let step = line_search(f, &phi, &d, state.energy, slope, tau);
        match step {
            Some((t, candidate, energy)) => {
                if energy > state.energy {
                    monotone = false;
                }
                let decrease = (state.energy - energy) / state.energy.abs().max(1.0);
                small_steps = if decrease < opts.tol_energy { small_steps + 1 } else { 0 };
                tau = t;
                phi = candidate;
                prev = Some((state.residual.clone(), d, zr));
                state = evaluate(f, &phi, &mut scratch);
            }
            None => {
                // No decrease representable along d: treat as a stalled step
                // and restart the momentum.
                small_steps += 1;
                tau = 1.0;
                prev = None;
                // A residual r buys at most about r^2 / stiffness of energy,
                // which drowns in the rounding of E on fine grids.
                let resolvable = (rounding * (state.energy.abs() + 1.0)).sqrt();
                let accept = (100.0 * tol_residual).max(resolvable);
                if state.residual_norm <= accept && small_steps >= opts.stall_window {
                    return Ok(finish(f, phi, state, iter, monotone));
                }
            }
        }
    }
    Err(Error::Convergence { iterations: opts.max_iter, residual: state.residual_norm })
}

fn line_search(
    f: &QuarticFunctional,
    phi: &[f64],
    d: &[f64],
    e0: f64,
    slope: f64,
    tau0: f64,
) -> Option<(f64, Vec<f64>, f64)> {
    const ARMIJO: f64 = 1e-4;
    let mut tau = tau0.clamp(1e-12, 1e6);
    let mut cand = retract(f, phi, d, tau);
    let mut e = f.energy(&cand);
    if e <= e0 + ARMIJO * tau * slope && e < e0 {
        // Expand while the energy keeps dropping.
        for _ in 0..8 {
            let t2 = 2.0 * tau;
            let c2 = retract(f, phi, d, t2);
            let e2 = f.energy(&c2);
            if e2 < e {
                tau = t2;
                cand = c2;
                e = e2;
            } else {
                break;
            }
        }
        return Some((tau, cand, e));
    }
    for _ in 0..60 {
        tau *= 0.5;
        cand = retract(f, phi, d, tau);
        e = f.energy(&cand);
        if e <= e0 + ARMIJO * tau * slope && e < e0 {
            return Some((tau, cand, e));
        }
    }
    None
}

fn finish(f: &QuarticFunctional, mut phi: Vec<f64>, state: State, iterations: usize, monotone: bool) -> Minimum {
    // The minimizer can be chosen nonnegative; |phi| never has higher energy.
    if phi.iter().sum::<f64>() < 0.0 {
        phi.iter_mut().for_each(|v| *v = -*v);
    }
    let mut state = state;
    if phi.iter().any(|&v| v < 0.0) {
        phi.iter_mut().for_each(|v| *v = v.abs());
        let mut scratch = vec![0.0; phi.len()];
        state = evaluate(f, &phi, &mut scratch);
    }
    Minimum {
        energy: state.energy,
        chemical_potential: state.lambda,
        residual: state.residual_norm,
        values: phi,
        iterations,
        monotone,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn dirichlet_functional(m: usize, quartic: f64) -> QuarticFunctional {
        let h = 1.0 / (m + 1) as f64;
        QuarticFunctional::new(QuadraticForm::kinetic(m, h, true), vec![h; m], quartic)
    }

    #[test]
    fn linear_case_reaches_discrete_ground_state() {
        let m = 255;
        let f = dirichlet_functional(m, 0.0);
        let init: Vec<f64> = (0..m).map(|i| 1.0 + 0.3 * ((i * 7 % 13) as f64)).collect();
        let min = minimize(&f, &init, &MinimizerOptions::default()).unwrap();
        let h = 1.0 / (m + 1) as f64;
        let exact = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!((min.energy - exact).abs() < 1e-9 * exact, "{} vs {exact}", min.energy);
        assert!(min.monotone);
        assert!(min.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = 40;
        let f = dirichlet_functional(m, 7.0);
        let phi: Vec<f64> = (0..m).map(|i| (0.3 * i as f64).sin() + 1.1).collect();
        let g = f.gradient(&phi);
        let eps = 1e-6;
        for i in [0, 7, 19, 39] {
            let mut p = phi.clone();
            p[i] += eps;
            let ep = f.energy(&p);
            p[i] -= 2.0 * eps;
            let em = f.energy(&p);
            let fd = (ep - em) / (2.0 * eps);
            assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn pinned_node_stays_zero() {
        let m = 63;
        let mut f = dirichlet_functional(m, 0.0);
        f.pin(31);
        let min = minimize(&f, &vec![1.0; m], &MinimizerOptions::default()).unwrap();
        assert_eq!(min.values[31], 0.0);
        // Two decoupled halves of length 1/2: energy near 4 pi^2.
        assert!((min.energy / (4.0 * PI * PI) - 1.0).abs() < 2e-3);
    }
}
