use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dualact(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_dualact"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

fn without_wall_time(dir: &Path) -> String {
    fs::read_to_string(dir.join("out/summary.json")).unwrap().lines().filter(|l| !l.contains("wall_time")).collect()
}

#[test]
fn algebraic_min_norm_demo() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["algebraic"], "seed = 3\n[algebraic]\nequations = 10\nunknowns = 20\n");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert!(s["min_norm_gap"].as_f64().unwrap() <= 1e-6);
    assert_eq!(s["converged"], true);
}

#[test]
fn inconsistent_system_exits_two() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["algebraic"], "[algebraic]\nequations = 20\nunknowns = 10\nconsistent = false\n");
    assert_eq!(out.status.code(), Some(2));
    let s = summary(dir.path());
    assert_eq!(s["converged"], false);
    assert!(s["ls_norm"].as_f64().unwrap().is_finite());
}

#[test]
fn heat_demo_writes_long_format_fields() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["ibvp"], "[ibvp]\nproblem = \"heat\"\nnx = 24\nnt = 20\n");
    assert_eq!(out.status.code(), Some(0));
    let fields = fs::read_to_string(dir.path().join("out/fields.csv")).unwrap();
    let mut lines = fields.lines();
    assert_eq!(lines.next(), Some("t,x,field,value"));
    // Heat has two primal fields, u and its flux variable.
    assert_eq!(lines.count(), 24 * 20 * 2);
    assert!(summary(dir.path())["errors"]["u_l2"].as_f64().unwrap() < 0.1);
}

#[test]
fn disloc_fields_have_three_coordinates() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["disloc"], "[disloc]\nnx = 9\nny = 8\nnt = 5\nt_final = 0.1\n");
    assert_eq!(out.status.code(), Some(0));
    let fields = fs::read_to_string(dir.path().join("out/fields.csv")).unwrap();
    assert!(fields.starts_with("t,x,y,field,value\n"));
    assert_eq!(fields.lines().count() - 1, 9 * 8 * 5 * 4);
}

#[test]
fn reruns_are_byte_identical_except_wall_time() {
    let cfg = "seed = 11\n[ibvp]\nproblem = \"transport\"\nnx = 16\nnt = 16\nt_final = 0.25\nic = \"gaussian\"\n";
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    dualact(a.path(), &["ibvp"], cfg);
    dualact(b.path(), &["ibvp"], cfg);
    assert_eq!(without_wall_time(a.path()), without_wall_time(b.path()));
    assert_eq!(
        fs::read(a.path().join("out/fields.csv")).unwrap(),
        fs::read(b.path().join("out/fields.csv")).unwrap()
    );
}

#[test]
fn convergence_indices_are_monotone() {
    let dir = TempDir::new().unwrap();
    dualact(dir.path(), &["fdmpoint"], "[fdmpoint]\nn_samples = 4\n");
    let csv = fs::read_to_string(dir.path().join("out/convergence.csv")).unwrap();
    let idx: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(idx, (0..4).collect::<Vec<_>>());
}

#[test]
fn config_errors_exit_three() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["ibvp"], "[ibvp]\nkapa = 1.0\n");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("did you mean `ibvp.kappa`"));

    let out = dualact(dir.path(), &["ibvp"], "[ibvp]\nkappa = -1.0\n");
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("kappa"));

    let out = dualact(dir.path(), &["disloc"], "subcommand = \"ibvp\"\n");
    assert_eq!(out.status.code(), Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_dualact"))
        .args(["ibvp", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_dualact"))
        .args(["verify", "--out"])
        .arg(dir.path().join("v"))
        .env("DUALACT_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn tampered_tolerance_is_reported() {
    let dir = TempDir::new().unwrap();
    let out = dualact(dir.path(), &["verify"], "[verify]\nfd_rel_tol = 0.0\n");
    assert_ne!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("envelope")), "{stdout}");
    assert_eq!(summary(dir.path())["converged"], false);
}
