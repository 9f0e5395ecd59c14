use std::f64::consts::PI;

use disbec::aux_interval::build_aux_table;
use disbec::disorder::{forward_spacings, moment_bound_check};
use disbec::thermo::{
    classify_phase, e0_deterministic, f_scaling, g_legendre, hard_wall_table, nbar, normalization, occupied_fraction,
    solve_mu, Phase,
};
use disbec::Strength;
use proptest::prelude::*;

// Independent oracles, frozen. The aux energies behind them come from a
// separate gradient-flow + Newton solver (Richardson over M = 1023 / 2047).
/// Golden-section minimization of n e(n) - mu n over [0, mu] at mu = 2 pi^2.
const NBAR_2PI2_GOLDEN: f64 = 6.831524892307033;
/// Inverse of mu(n) = e(n) + n e'(n), exact at the oracle knots.
const NBAR_2PI2: f64 = 6.831384643707655;
const G_2PI2: f64 = -33.31583298326042;
/// Trapezoid quadrature (1e5 points on (pi / sqrt(mu), 40 / nu)) inside a
/// bisection on mu, at gamma = 100, nu = 50.
const MU_100_50: f64 = 2288.087923477802;
const E0_100_50: f64 = 1691.4735887840898;

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn nbar_examples() {
    let t = hard_wall_table();
    assert_eq!(nbar(PI * PI / 2.0, t).unwrap(), 0.0);
    let n = nbar(2.0 * PI * PI, t).unwrap();
    assert!((2.0 / 3.0 * PI * PI..=PI * PI).contains(&n), "{n}");
    assert!(rel(n, NBAR_2PI2_GOLDEN) < 1e-4, "{n}");
    assert!(rel(n, NBAR_2PI2) < 1e-6, "{n}");
}

#[test]
fn g_examples() {
    let t = hard_wall_table();
    assert!(g_legendre(PI * PI, t).unwrap().abs() < 1e-20);
    assert_eq!(g_legendre(1.0, t).unwrap(), 0.0);
    let g = g_legendre(2.0 * PI * PI, t).unwrap();
    assert!(g >= -PI.powi(4) / 2.0, "{g}");
    assert!(rel(g, G_2PI2) < 1e-6, "{g}");
}

#[test]
fn solve_mu_examples() {
    let t = hard_wall_table();
    let mu = solve_mu(2500.0, 50.0, t).unwrap();
    assert!((normalization(mu, 2500.0, 50.0, t).unwrap() - 1.0).abs() < 1e-8);
    assert!(mu / 2500.0 >= 0.05 && mu / 2500.0 <= 20.0, "{mu}");
    let mu = solve_mu(100.0, 50.0, t).unwrap();
    assert!(rel(mu, MU_100_50) < 1e-6, "{mu}");
}

#[test]
fn e0_oracle_and_duality() {
    let t = hard_wall_table();
    let e = e0_deterministic(100.0, 50.0, t).unwrap();
    assert!(rel(e.dual, E0_100_50) < 1e-6, "{}", e.dual);
    for gamma in [10.0, 300.0, 1e4] {
        for nu in [5.0, 40.0, 300.0] {
            let e = e0_deterministic(gamma, nu, t).unwrap();
            assert!(e.mismatch() < 1e-4, "gamma {gamma} nu {nu}: {}", e.mismatch());
        }
    }
}

#[test]
fn e0_scaling_identity() {
    let t = hard_wall_table();
    for (gamma, nu) in [(100.0f64, 10.0f64), (400.0, 40.0)] {
        let a = e0_deterministic(gamma, nu, t).unwrap().dual;
        let b = gamma * e0_deterministic(1.0, nu / gamma.sqrt(), t).unwrap().dual;
        assert!(rel(a, b) < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn e0_order_window() {
    let t = hard_wall_table();
    let mut bad = Vec::new();
    for nu in [10.0f64, 100.0, 1000.0] {
        for x in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let gamma = nu * nu / x;
            let e = e0_deterministic(gamma, nu, t).unwrap().dual;
            let r = e / (gamma * f_scaling(x));
            if !(0.1..=10.0).contains(&r) {
                bad.push((nu, x, r));
            }
        }
    }
    assert!(bad.is_empty(), "outside [0.1, 10]: {bad:?}");
}

#[test]
fn f_scaling_examples() {
    assert_eq!(f_scaling(0.5), 1.0);
    assert_eq!(f_scaling(1.0), 1.0);
    assert!((f_scaling(std::f64::consts::E) - 0.6796).abs() < 1e-4);
}

#[test]
fn occupied_fraction_examples() {
    assert!(occupied_fraction(1e20, 3.0) > 1.0 - 1e-8);
    assert!((occupied_fraction(400.0, 20.0) - 0.0432).abs() < 1e-4);
}

#[test]
fn occupied_fraction_matches_sampled_spacings() {
    let t = hard_wall_table();
    let (gamma, nu) = (2500.0, 50.0);
    let mu = solve_mu(gamma, nu, t).unwrap();
    let lambda = occupied_fraction(mu, nu);
    let cut = PI / mu.sqrt();
    let (mut hits, mut total) = (0usize, 0usize);
    for seed in 0..2000 {
        for l in forward_spacings(nu, seed) {
            total += 1;
            hits += (l > cut) as usize;
        }
    }
    let p = hits as f64 / total as f64;
    let se = (lambda * (1.0 - lambda) / total as f64).sqrt();
    assert!((p - lambda).abs() <= 3.0 * se, "{p} vs {lambda} (se {se})");
}

#[test]
fn phase_extended_at_large_gamma() {
    let s = classify_phase(100.0 * 2500.0, 50.0, hard_wall_table()).unwrap();
    assert_eq!(s.phase, Phase::Extended, "lambda = {}", s.lambda_frac);
}

#[test]
fn phase_extended_deep_in_the_delocalized_regime() {
    let s = classify_phase(1e4 * 2500.0, 50.0, hard_wall_table()).unwrap();
    assert_eq!(s.phase, Phase::Extended, "lambda = {}", s.lambda_frac);
    let mut last = 0.0;
    for r in [1.0, 10.0, 100.0, 1e3, 1e4] {
        let l = classify_phase(r * 2500.0, 50.0, hard_wall_table()).unwrap().lambda_frac;
        assert!(l > last);
        last = l;
    }
    assert!(last > 0.95, "{last}");
}

#[test]
fn phase_few_intervals() {
    let nu: f64 = 1e4;
    let s = classify_phase(nu / nu.ln().powi(2), nu, hard_wall_table()).unwrap();
    assert_eq!(s.phase, Phase::FewIntervals);
    assert!(s.occupied_intervals() < 10.0);
}

#[test]
fn phase_fragmented_localized() {
    let nu: f64 = 100.0;
    let gamma = nu * nu / 100.0;
    let s = classify_phase(gamma, nu, hard_wall_table()).unwrap();
    let target = (nu / (nu * nu / gamma).ln()).powi(2);
    assert!(s.mu / target >= 0.1 && s.mu / target <= 10.0, "mu {} vs {target}", s.mu);
    assert_eq!(s.phase, Phase::FragmentedLocalized, "lambda nu = {}", s.occupied_intervals());
}

#[test]
fn mean_interval_and_lambda_relations() {
    let t = hard_wall_table();
    for nu in [20.0f64, 200.0] {
        for x in [0.01, 1.0, 100.0] {
            let s = classify_phase(nu * nu / x, nu, t).unwrap();
            assert!((s.mu_from_lambda() / s.mu - 1.0).abs() < 1e-12);
            assert!((0.1..=10.0).contains(&s.mean_interval_ratio()), "nu {nu} x {x}: {}", s.mean_interval_ratio());
            assert!((s.e0 / s.mu >= 0.25) && (s.e0 / s.mu <= 4.0), "nu {nu} x {x}");
        }
    }
}

#[test]
fn occupation_ratio_window() {
    let t = hard_wall_table();
    let mut bad = Vec::new();
    for nu in [20.0f64, 200.0, 2000.0] {
        for x in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let s = classify_phase(nu * nu / x, nu, t).unwrap();
            let r = s.occupation_ratio();
            if !(0.1..=10.0).contains(&r) {
                bad.push((nu, x, r));
            }
        }
    }
    assert!(bad.is_empty(), "outside [0.1, 10]: {bad:?}");
}

#[test]
fn exponential_moment_identity() {
    for x in [0.0, 1.0, 5.0, 10.0] {
        let c = moment_bound_check(x, 1).unwrap();
        assert!(c.value >= 1.0 - 1e-9 && c.value <= 2.0 + 1e-9, "x {x}: {}", c.value);
    }
}

#[test]
fn nbar_bounds_on_finite_alpha_grid() {
    for alpha in [1.0, 10.0, 100.0] {
        let t = build_aux_table(Strength::Finite(alpha), 300.0, 48).unwrap();
        let e0 = t.e0();
        for mu in [0.5 * e0, e0 + 0.01, e0 + 1.0, 2.0 * e0 + 5.0, e0 + 50.0, e0 + 250.0] {
            let n = nbar(mu, &t).unwrap();
            let ex = (mu - e0).max(0.0);
            assert!(n >= 2.0 / 3.0 * ex - 1e-6 && n <= ex + 1e-6, "alpha {alpha} mu {mu}: {n}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nbar_bounds_hard_wall(mu in 0.0f64..1e4) {
        let n = nbar(mu, hard_wall_table()).unwrap();
        let ex = (mu - PI * PI).max(0.0);
        prop_assert!(n >= 2.0 / 3.0 * ex - 1e-6 && n <= ex + 1e-6);
    }

    #[test]
    fn g_nonincreasing_and_concave(a in 1.0f64..2e3, b in 1.0f64..2e3) {
        let t = hard_wall_table();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let g = |m: f64| g_legendre(m, t).unwrap();
        prop_assert!(g(hi) <= g(lo) + 1e-9 * (1.0 + g(lo).abs()));
        let mid = 0.5 * (lo + hi);
        prop_assert!(g(mid) >= 0.5 * (g(lo) + g(hi)) - 1e-7 * (1.0 + g(hi).abs()));
    }
}
