use std::fs;
use std::path::PathBuf;

use disbec::disorder::EnsembleSpec;
use disbec::gp_solver::GpOptions;
use disbec::harness::{
    ensemble_grid, mean_std, phase_diagram, run, run_ensemble, Aggregates, ExperimentConfig, Mode, Scaling,
    ScalingName, ENSEMBLE_CSV_HEADER, PHASE_CSV_HEADER,
};
use disbec::thermo::Phase;
use disbec::{ModelParams, Strength};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("disbec-harness-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn quick() -> GpOptions {
    GpOptions { bounds: false, estimate_error: false, ..Default::default() }
}

fn ensemble(nu: f64, gamma: f64, sigma: f64, k: usize) -> disbec::harness::EnsembleReport {
    let p = ModelParams {
        gamma,
        sigma: Strength::Finite(sigma),
        nu,
        grid_points: ensemble_grid(1023, nu),
        ..Default::default()
    };
    run_ensemble(&p, &EnsembleSpec::new(nu, k, 0).unwrap(), &quick()).unwrap()
}

#[test]
fn occupation_statistic_averages_to_one() {
    let r = ensemble(100.0, 1e4, 1e3, 64);
    let a = &r.aggregates;
    assert_eq!(a.failures, 0);
    assert_eq!(r.records.len(), 64);
    assert!((a.mean_n - 1.0).abs() <= 3.0 * a.stderr_n, "{} +- {}", a.mean_n, a.stderr_n);
}

#[test]
fn ratio_fluctuations_shrink_with_density() {
    let a = ensemble(100.0, 1e4, 1e3, 64).aggregates;
    let b = ensemble(200.0, 4e4, 2e3, 64).aggregates;
    assert!(b.std_ratio < a.std_ratio, "{} vs {}", b.std_ratio, a.std_ratio);
    assert!(b.std_n * b.std_n < a.std_n * a.std_n);
}

#[test]
fn zero_coupling_control_mean_is_of_order_log_law() {
    let r = ensemble(50.0, 0.0, 500.0, 16);
    let ratios: Vec<f64> = r.records.iter().map(|x| x.ratio.unwrap()).collect();
    let (mean, std, _) = mean_std(&ratios);
    assert!((0.1..=10.0).contains(&mean), "{mean}");
    assert!(std > 0.1 * mean, "{ratios:?}");
    assert!(r.thermo.is_none());
}

#[test]
fn zero_coupling_control_every_sample_in_window() {
    let r = ensemble(50.0, 0.0, 500.0, 16);
    let ratios: Vec<f64> = r.records.iter().map(|x| x.ratio.unwrap()).collect();
    assert!(ratios.iter().all(|x| (0.1..=10.0).contains(x)), "{ratios:?}");
}

#[test]
fn aggregates_recompute_from_records() {
    let r = ensemble(30.0, 900.0, 300.0, 12);
    let again = Aggregates::from_records(&r.records);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    let (x, y) = (&r.aggregates, &again);
    assert!(
        close(x.mean_ratio, y.mean_ratio) && close(x.std_ratio, y.std_ratio) && close(x.stderr_ratio, y.stderr_ratio)
    );
    assert!(close(x.mean_n, y.mean_n) && close(x.std_n, y.std_n) && close(x.mean_e_stat, y.mean_e_stat));
    let seeds: Vec<u64> = r.records.iter().map(|s| s.seed).collect();
    assert_eq!(seeds, (0..12).collect::<Vec<_>>());
}

#[test]
fn phase_diagram_diagonal_is_transition_and_lambda_monotone() {
    let nus = [20.0, 100.0, 1000.0];
    let ratios = [0.01, 0.1, 1.0, 10.0, 100.0];
    let cells = phase_diagram(&[], &ratios, &nus, Scaling::Named(ScalingName::Default), 0.0, 0, 1023).unwrap();
    assert_eq!(cells.len(), nus.len() * ratios.len());
    for &nu in &nus {
        let row: Vec<_> = cells.iter().filter(|c| c.thermo.nu == nu).collect();
        for w in row.windows(2) {
            assert!(w[1].thermo.gamma > w[0].thermo.gamma);
            assert!(w[1].thermo.lambda_frac > w[0].thermo.lambda_frac);
        }
        let diag = row.iter().find(|c| c.thermo.gamma == nu * nu).unwrap();
        assert!(diag.thermo.lambda_frac > 0.1 && diag.thermo.lambda_frac < 0.9);
        assert_eq!(diag.thermo.phase, Phase::Transition);
    }
}

#[test]
fn phase_diagram_extended_at_large_gamma() {
    let nus = [20.0, 100.0, 1000.0];
    let cells = phase_diagram(&[], &[100.0], &nus, Scaling::Named(ScalingName::Default), 0.0, 0, 1023).unwrap();
    for c in &cells {
        assert_eq!(c.thermo.phase, Phase::Extended, "nu {}: lambda {}", c.thermo.nu, c.thermo.lambda_frac);
    }
}

fn ensemble_config(dir: PathBuf) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(
        r#"{
            "mode": "ensemble",
            "params": {"gamma": 0, "sigma": 0, "nu": 1, "grid_points": 255},
            "ensemble": {"nu": 20, "samples": 4, "base_seed": 5},
            "sweep": {"nus": [10, 20], "gamma_rule": "1*nu^2", "sigma_rule": "10*nu"}
        }"#,
    )
    .unwrap();
    c.output_dir = dir;
    c
}

#[test]
fn ensemble_outputs_and_byte_identical_rerun() {
    let dir = scratch("ensemble");
    let config = ensemble_config(dir.clone());
    let first = run(&config).unwrap();
    assert_eq!(first.samples, 8);
    let names: Vec<String> =
        first.files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.iter().all(|n| n.starts_with("ensemble_nu10-20_K4_seed5")), "{names:?}");
    let dat = first.files.iter().find(|p| p.to_string_lossy().ends_with("ratio_vs_nu.dat")).unwrap();
    let rows: Vec<String> =
        fs::read_to_string(dat).unwrap().lines().filter(|l| !l.starts_with('#')).map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("10 ") && rows[1].starts_with("20 "));
    let csv = first.files.iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().next().unwrap(), ENSEMBLE_CSV_HEADER);
    let before: Vec<Vec<u8>> = first.files.iter().map(|p| fs::read(p).unwrap()).collect();
    let second = run(&config).unwrap();
    assert_eq!(first.files, second.files);
    let after: Vec<Vec<u8>> = second.files.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn phase_csv_schema() {
    let dir = scratch("phase");
    let mut config = ExperimentConfig::from_json(
        r#"{"mode": "phase-diagram", "sweep": {"nus": [20, 50], "gamma_ratios": [0.1, 1, 10], "gp_max_nu": 20}}"#,
    )
    .unwrap();
    config.output_dir = dir.clone();
    let out = run(&config).unwrap();
    let csv = out.files.iter().find(|p| p.to_string_lossy().ends_with("seed0.csv")).unwrap();
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), PHASE_CSV_HEADER);
    assert_eq!(PHASE_CSV_HEADER, "gamma,nu,mu,lambda,e0,phase");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols.len(), 6);
        assert!(cols[..5].iter().all(|c| c.parse::<f64>().is_ok()));
        assert!(["extended", "transition", "fragmented_localized", "few_intervals"].contains(&cols[5]), "{r}");
    }
    assert_eq!(out.samples, 3);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn experiment_config_json() {
    let c = ExperimentConfig::from_json(
        r#"{"mode": "poisson-stats", "params": {"nu": 20}, "ensemble": {"nu": 20, "samples": 100000, "base_seed": 1}}"#,
    )
    .unwrap();
    assert_eq!(c.mode, Mode::PoissonStats);
    assert_eq!(c.ensemble.seed(3), 4);
    let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(back, c);
    assert!(ExperimentConfig::from_json(r#"{"mode": "nope"}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"mode": "gp", "params": {"sigma": -2}}"#).is_err());
}

#[test]
fn readme_default_config_is_the_default() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```json\n{\n  \"mode\"").unwrap() + "```json\n".len();
    let block = &readme[start..start + readme[start..].find("```").unwrap()];
    let parsed = ExperimentConfig::from_json(block).unwrap();
    let expected = ExperimentConfig { mode: Mode::Ensemble, ..Default::default() };
    assert_eq!(parsed, expected);
}
