use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gridless-doa"));
    cmd.env("RUST_LOG", "error");
    cmd
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const SMALL: &str = r#"{"geometry": "ula", "m": 12, "k": 2, "l": 6, "snr_db": [10, "inf"], "n_trials": 3,
    "solvers": ["root_music", "cbf"], "seed": 3}"#;

#[test]
fn run_writes_versioned_csv() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out.csv");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# gridless-doa results v1");
    assert_eq!(lines[1], "sweep_var,sweep_value,solver,rmse_deg,mean_runtime_s,n_trials,failures,seed");
    assert_eq!(lines.len(), 2 + 4);
    assert!(lines[2..].iter().all(|l| l.starts_with("snr_db,")));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("root_music") && stdout.contains("rmse_deg"));
}

#[test]
fn overrides_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out.csv");
    let trials = dir.path().join("trials.csv");
    let o = run(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--seed", "11", "--trials", "2", "--solver", "cbf", "--dump-trials", trials.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f[2], "cbf");
        assert_eq!(f[5], "2");
        assert_eq!(f[7], "11");
    }
    assert_eq!(std::fs::read_to_string(&trials).unwrap().lines().count(), 1 + 2 * 2);
}

#[test]
fn invalid_solver_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out.csv");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--solver", "music"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.json", &SMALL.replace("\"cbf\"", "\"esprit\""));
    let o = run(&["run", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_config_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.csv");
    let o = run(&["run", "--config", dir.path().join("nope.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage"));
    let o = run(&["run", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("usage"));
}

#[test]
fn geometry_mismatch_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "nua.json", &SMALL.replace("\"ula\"", "\"nua\""));
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectrum_dump_shows_source_minima() {
    let dir = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/null_spectrum_nua.json");
    let out = dir.path().join("o.csv");
    let spectrum = dir.path().join("spectrum.csv");
    let o = run(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(),
        "--dump-spectrum", spectrum.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&spectrum).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("phase_deg,d_tilde"));
    let pts: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let n = pts.len();
    let max = pts.iter().map(|p| p.1).fold(0.0, f64::max);
    let minima: Vec<f64> = (1..n - 1)
        .filter(|&i| pts[i].1 < pts[i - 1].1 && pts[i].1 < pts[i + 1].1 && pts[i].1 < 1e-3 * max)
        .map(|i| pts[i].0)
        .collect();
    assert_eq!(minima.len(), 3, "{minima:?}");
    for theta in [-7.24f64, 15.96, 42.07] {
        let phase = -180.0 * theta.to_radians().sin();
        assert!(minima.iter().any(|m| (m - phase).abs() < 0.2), "{phase} not in {minima:?}");
    }
}

#[test]
fn residual_dump_lists_iterative_solvers() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "ap.json",
        r#"{"geometry": "ula", "m": 10, "k": 1, "l": 1, "n_trials": 1, "solvers": ["ap_ula", "cbf"],
            "scene": {"thetas_deg": [12]}}"#,
    );
    let res = dir.path().join("res.csv");
    let o = run(&[
        "run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap(),
        "--dump-residuals", res.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&res).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("solver,iteration,residual,gap"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.starts_with("ap_ula,")));
}

#[test]
fn geometry_export_round_trips() {
    let dir = TempDir::new().unwrap();
    let geom = dir.path().join("array.txt");
    let o = run(&["geometry", "--m", "8", "--seed", "5", "--out", geom.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let cfg = write_config(
        dir.path(),
        "g.json",
        r#"{"geometry": "nua", "geometry_file": "array.txt", "m": 8, "k": 2, "l": 5, "n_trials": 2,
            "solvers": ["irregular_root_music"]}"#,
    );
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
