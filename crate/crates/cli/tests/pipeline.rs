use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# 32² grid, 50 steps
grid_n = 32
dt = 1e-3
t_end = 0.05
initial = formula
n_list = 10;25;50
spinup_duration = 0.02
delta_list = 0;1e-2;1e-1
robustness_dt = 1e-3
robustness_t_end = 0.02
robustness_stride = 5
ensemble = 2
";

fn saltcal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_saltcal"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .env_remove("SALTCAL_OUT")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.cfg");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn key(text: &str, name: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{name} = ")))
        .unwrap_or_else(|| panic!("{name} missing from\n{text}"))
        .to_string()
}

#[test]
fn calibrate_without_trajectory_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = saltcal(dir.path(), &["calibrate"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("trajectory.sltv"), "{stderr}");
}

#[test]
fn missing_config_file_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = saltcal(dir.path(), &["--config", "/nonexistent/run.cfg", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "grid_n = 63\n").unwrap();
    let out = saltcal(dir.path(), &["--config", cfg.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_on_empty_directory_warns() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(saltcal(dir.path(), &["report"]));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("empty report"), "{stderr}");
}

#[test]
fn full_pipeline_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d);
    ok(saltcal(d, &["--config", &cfg, "spinup"]));
    assert!(d.join("initial_state.sltv").is_file());
    assert_eq!(fs::read_to_string(d.join("initial_state.csv")).unwrap().lines().count(), 32);

    ok(saltcal(d, &["--config", &cfg, "simulate"]));
    ok(saltcal(d, &["--config", &cfg, "calibrate", "--energy-route", "--pointwise"]));
    let cal = fs::read_to_string(d.join("calibration.txt")).unwrap();
    let alpha_hat: f64 = key(&cal, "alpha_hat").parse().unwrap();
    assert!(alpha_hat > 0.0 && alpha_hat.is_finite());
    let conv = fs::read_to_string(d.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 1 + 3);
    for name in ["qv_field.csv", "b_field.csv", "pointwise_alpha.csv"] {
        assert!(d.join(name).is_file(), "{name}");
    }

    ok(saltcal(d, &["--config", &cfg, "robustness"]));
    let rob = fs::read_to_string(d.join("robustness.csv")).unwrap();
    assert_eq!(rob.lines().count(), 1 + 3);

    ok(saltcal(d, &["--config", &cfg, "report"]));
    let report = fs::read_to_string(d.join("report.txt")).unwrap();
    for name in ["calibration.txt", "convergence.csv", "robustness.txt"] {
        assert!(report.contains(name), "{name} not in report");
    }
}

#[test]
fn runs_are_deterministic_and_seed_override_applies() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (i, dir) in dirs.iter().enumerate() {
        let cfg = small_config(dir.path());
        let seed = if i == 2 { "7" } else { "1" };
        ok(saltcal(dir.path(), &["--config", &cfg, "--seed", seed, "simulate"]));
    }
    let bytes = |d: &tempfile::TempDir| fs::read(d.path().join("trajectory.sltv")).unwrap();
    assert_eq!(bytes(&dirs[0]), bytes(&dirs[1]));
    assert_ne!(bytes(&dirs[0]), bytes(&dirs[2]));
    let used = fs::read_to_string(dirs[2].path().join("config.txt")).unwrap();
    assert_eq!(key(&used, "seed"), "7");
}
