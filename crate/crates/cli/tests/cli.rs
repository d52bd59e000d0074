use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "delta_x_list = [10, 20, 30, 40]\nt_max = 2\nn_samples = 11\nn_realizations = 16\n";

fn gaussdrift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussdrift"))
        .args(args)
        .env_remove("GAUSSDRIFT_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn sweep_writes_series_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = gaussdrift(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--gnuplot"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for dx in [10, 20, 30, 40] {
        let series = fs::read_to_string(out.join(format!("series_dx{dx}.csv"))).unwrap();
        assert!(series.starts_with("time,coherence,stderr\n0.0,1.0,"));
        assert_eq!(series.lines().count(), 12);
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "delta_x,gamma,gamma_stderr,r_squared,n_used_realizations");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("10.0,") && lines[1].ends_with(",16"));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=sweep\n"));
    assert!(manifest.contains("seed=20240601\n"));
    assert!(manifest.contains("config.n_realizations=16\n"));
    assert!(out.join("coherence.gp").exists() && out.join("gamma.gp").exists());
}

#[test]
fn same_seed_gives_identical_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(gaussdrift(&["sweep", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "7"]).status.success());
    assert!(gaussdrift(&["sweep", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "7"]).status.success());
    for name in ["series_dx10.csv", "series_dx40.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = tmp.path().join("c");
    assert!(gaussdrift(&["sweep", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "8"]).status.success());
    assert_ne!(fs::read(a.join("series_dx40.csv")).unwrap(), fs::read(c.join("series_dx40.csv")).unwrap());
}

#[test]
fn fit_recovers_synthetic_rate() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("series_dx3.csv");
    let mut text = String::from("time,coherence,stderr\n");
    for k in 0..21 {
        let t = 0.5 * k as f64;
        text.push_str(&format!("{t:?},{:?},0.0\n", (-0.1 * t).exp()));
    }
    fs::write(&path, text).unwrap();
    let out = tmp.path().join("fit");
    let o = gaussdrift(&["fit", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "3.0");
    assert!((row[1].parse::<f64>().unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap(), text);
}

#[test]
fn fit_reproduces_sweep_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "delta_x_list = [30]\nt_max = 2\nn_samples = 11\nn_realizations = 16\n");
    let out = tmp.path().join("out");
    assert!(gaussdrift(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let o = gaussdrift(&["fit", out.join("series_dx30.csv").to_str().unwrap()]);
    assert!(o.status.success());
    let refit = stdout(&o);
    let original = fs::read_to_string(out.join("summary.csv")).unwrap();
    let strip = |s: &str| s.lines().nth(1).unwrap().rsplit_once(',').unwrap().0.to_string();
    assert_eq!(strip(&refit), strip(&original));
}

#[test]
fn run_uses_requested_separation() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = gaussdrift(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--dx", "25"]);
    assert!(o.status.success());
    assert!(out.join("series_dx25.csv").exists());
    assert!(!out.join("series_dx10.csv").exists());
    assert_eq!(fs::read_to_string(out.join("summary.csv")).unwrap().lines().count(), 2);
}

#[test]
fn config_errors_are_one_line_categories() {
    let tmp = TempDir::new().unwrap();
    for (text, category) in [
        ("bath.density = -1\n", "error=constraint-violation"),
        ("bath.densty = 1\n", "error=unknown-key"),
        ("t_max = \n", "error=config-parse"),
    ] {
        let cfg = write_config(tmp.path(), text);
        let o = gaussdrift(&["sweep", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
        assert!(!o.status.success());
        assert_eq!(stdout(&o), format!("{category}\n"));
    }
    let o = gaussdrift(&["sweep", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(stdout(&o), "error=io\n");
}

#[test]
fn missing_fit_gives_nonzero_exit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "delta_x_list = [10]\nt_max = 1\nn_samples = 3\nn_realizations = 2\n");
    let out = tmp.path().join("out");
    let o = gaussdrift(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert_eq!(stdout(&o), "error=insufficient-data\n");
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.ends_with("10.0,NaN,NaN,NaN,2\n"));
}

#[test]
fn thread_count_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "delta_x_list = [10]\nt_max = 1\nn_samples = 6\nn_realizations = 4\n");
    let out = tmp.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_gaussdrift"))
        .args(["run", "--config", &cfg, "--out", out.to_str().unwrap()])
        .env("GAUSSDRIFT_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(out.join("manifest.txt")).unwrap().contains("threads=2\n"));
}
