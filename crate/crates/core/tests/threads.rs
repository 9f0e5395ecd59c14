// Own test binary: it changes the worker-count variable of the process.

use disbec::disorder::EnsembleSpec;
use disbec::gp_solver::GpOptions;
use disbec::harness::{run_ensemble, thread_count, THREADS_ENV};
use disbec::{ModelParams, Strength};

#[test]
fn parallel_ensemble_equals_serial() {
    let p =
        ModelParams { gamma: 400.0, sigma: Strength::Finite(200.0), nu: 20.0, grid_points: 511, ..Default::default() };
    let spec = EnsembleSpec::new(20.0, 12, 3).unwrap();
    let opts = GpOptions::default();
    std::env::set_var(THREADS_ENV, "1");
    assert_eq!(thread_count(), 1);
    let serial = run_ensemble(&p, &spec, &opts).unwrap();
    std::env::set_var(THREADS_ENV, "4");
    assert_eq!(thread_count(), 4);
    let parallel = run_ensemble(&p, &spec, &opts).unwrap();
    std::env::set_var(THREADS_ENV, "zero");
    assert!(thread_count() >= 1);
    std::env::remove_var(THREADS_ENV);
    assert_eq!(serial, parallel);
    assert_eq!(serde_json::to_string(&serial).unwrap(), serde_json::to_string(&parallel).unwrap());
}
