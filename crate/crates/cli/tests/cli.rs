use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("disbec-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn disbec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_disbec"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("DISBEC_THREADS")
        .output()
        .unwrap()
}

fn written(o: &Output) -> Vec<PathBuf> {
    String::from_utf8_lossy(&o.stdout).lines().filter_map(|l| l.strip_prefix("wrote ")).map(PathBuf::from).collect()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn thermo_succeeds() {
    let dir = scratch("thermo");
    let o = disbec(&["thermo", "--gamma", "2500", "--nu", "50"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = written(&o);
    assert!(!files.is_empty());
    for f in &files {
        assert!(f.exists());
        assert!(f.file_name().unwrap().to_string_lossy().starts_with("thermo_"), "{f:?}");
    }
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn fatal_errors_exit_one() {
    let dir = scratch("fatal");
    let o = disbec(&["thermo", "--gamma", "-1", "--nu", "50"], &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = disbec(&["gp", "--config", dir.join("missing.json").to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(1));
    let o = disbec(&["no-such-mode"], &dir);
    assert_eq!(o.status.code(), Some(1));
    let bad = write_config(&dir, r#"{"mode": "ensemble", "failure_threshold": 3}"#);
    let o = disbec(&["ensemble", "--config", &bad], &dir);
    assert_eq!(o.status.code(), Some(1));
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn failed_samples_above_threshold_exit_two() {
    let dir = scratch("failures");
    let config = write_config(
        &dir,
        r#"{"mode": "ensemble",
            "params": {"gamma": 400, "sigma": 200, "nu": 20, "grid_points": 255, "max_iter": 1},
            "ensemble": {"nu": 20, "samples": 4, "base_seed": 0}}"#,
    );
    let o = disbec(&["ensemble", "--config", &config], &dir);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    // Partial results are still written.
    assert_eq!(written(&o).len(), 4);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn ensemble_files_and_byte_identical_rerun() {
    let dir = scratch("ensemble");
    let args = [
        "ensemble",
        "--nus",
        "10,20",
        "--samples",
        "4",
        "--seed",
        "3",
        "--grid",
        "255",
        "--gamma-rule",
        "1*nu^2",
        "--sigma-rule",
        "10*nu",
    ];
    let first = disbec(&args, &dir);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let files = written(&first);
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert!(names.iter().all(|n| n.starts_with("ensemble_nu10-20_K4_seed3")), "{names:?}");
    let dat = files.iter().find(|p| p.to_string_lossy().ends_with("ratio_vs_nu.dat")).unwrap();
    let rows = fs::read_to_string(dat).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 2);
    let csv = files.iter().find(|p| p.extension().unwrap() == "csv").unwrap();
    assert_eq!(fs::read_to_string(csv).unwrap().lines().next().unwrap(), disbec::harness::ENSEMBLE_CSV_HEADER);
    let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();

    let second = Command::new(env!("CARGO_BIN_EXE_disbec"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .env("DISBEC_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    let after: Vec<Vec<u8>> = written(&second).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn phase_diagram_csv_header() {
    let dir = scratch("phase");
    let o = disbec(&["phase-diagram", "--nus", "20,50", "--gamma-ratios", "0.1,1,10", "--gp-max-nu", "0"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = written(&o).into_iter().find(|p| p.to_string_lossy().ends_with("seed0.csv")).unwrap();
    let text = fs::read_to_string(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "gamma,nu,mu,lambda,e0,phase");
    assert_eq!(text.lines().count(), 7);
    fs::remove_dir_all(dir).unwrap();
}

#[test]
fn gp_writes_decimated_json_and_density() {
    let dir = scratch("gp");
    let o = disbec(&["gp", "--gamma", "400", "--sigma", "inf", "--nu", "20", "--seed", "2", "--grid", "4095"], &dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = written(&o);
    let json = files.iter().find(|p| p.extension().unwrap() == "json").unwrap();
    let name = json.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("gp_g400_sinf_") && name.contains("M4095"), "{name}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    let samples = v["minimizer"].as_array().unwrap();
    assert!(samples.len() <= 2048 && samples.len() > 1000, "{}", samples.len());
    let dat = files.iter().find(|p| p.to_string_lossy().ends_with("_density.dat")).unwrap();
    let rows: Vec<Vec<f64>> = fs::read_to_string(dat)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|x| x.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().all(|r| r.len() == 2 && r[1] >= 0.0));
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
    fs::remove_dir_all(dir).unwrap();
}
