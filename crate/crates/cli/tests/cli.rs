use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use magpen_core::config::{ExperimentConfig, PUBLISHED_SCHEMA};

fn magpen() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_magpen"));
    c.env_remove("MAGPEN_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    magpen().args(args).output().expect("spawn magpen")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run_dir(o: &Output) -> PathBuf {
    PathBuf::from(stdout(o).trim())
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fit_bundled_scan_recovers_constants() {
    let o = run(&["fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let c1 = report["c1"].as_f64().unwrap();
    let c2 = report["c2"].as_f64().unwrap();
    assert!(((c1 + 1.276e-7) / 1.276e-7).abs() < 1e-3, "{c1}");
    assert!(((c2 - 2.713e-2) / 2.713e-2).abs() < 1e-3, "{c2}");
    assert!(stderr(&o).contains("h = 2.71 cm"), "{}", stderr(&o));
}

#[test]
fn fit_writes_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/fit.json");
    let scan = repo_file("crates/cli/data/synthetic_scan.csv");
    let o = run(&["fit", scan.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written["samples"], 61);
}

#[test]
fn fit_rejects_empty_and_malformed_scans() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let o = run(&["fit", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "distance_m,bz_t\n0.0,-0.0127\n0.001,oops\n").unwrap();
    let o = run(&["fit", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2, column bz_t"), "{}", stderr(&o));
}

#[test]
fn standard_suite_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("does/not/exist/yet");
    let args = ["run", "--suite", "standard", "--seed", "7", "--out", out.to_str().unwrap()];
    let a = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = magpen().args(args).env("MAGPEN_THREADS", "1").output().unwrap();
    assert!(b.status.success(), "{}", stderr(&b));
    let (da, db) = (run_dir(&a), run_dir(&b));
    assert_ne!(da, db);
    let ta = read_tree(&da.join("traces"));
    assert_eq!(ta.len(), 18);
    assert_eq!(ta, read_tree(&db.join("traces")));
    assert!(da.join("config.json").is_file());
    let resolved = ExperimentConfig::load(&da.join("config.json")).unwrap();
    assert_eq!(resolved.seeds, vec![7]);
    let metrics = std::fs::read_to_string(da.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
}

#[test]
fn curvature_sweep_writes_nine_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "--scenario", "curvature_sweep", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(run_dir(&o).join("curvature.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9, "{csv}");
}

#[test]
fn invalid_configs_exit_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.jsonc");
    std::fs::write(&cfg, "{\n  // typo below\n  \"weights\": { \"w_q\": 1.0 }\n}\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("weights") && err.contains("w_q"), "{err}");

    let o = run(&["run", "--scenario", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));

    let o = magpen().args(["run", "--scenario", "dispersion"]).env("MAGPEN_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_config_is_the_default() {
    let c = ExperimentConfig::load(&repo_file("configs/default.jsonc")).unwrap();
    assert_eq!(c, ExperimentConfig::default());
}

#[test]
fn schema_verb_prints_published_schema() {
    let o = run(&["schema"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), PUBLISHED_SCHEMA);
}

#[test]
fn check_reports_pass_and_fail() {
    let o = run(&["check", "--only", "em_constants", "--only", "force_curve"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("PASS em_constants")), "{out}");
    assert!(out.lines().any(|l| l.starts_with("PASS force_curve")), "{out}");

    let o = run(&["check", "--only", "tilt_bound"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL tilt_bound"));

    let o = run(&["check", "--list"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 12);

    assert_eq!(run(&["check", "--only", "nope"]).status.code(), Some(2));
}

#[test]
fn serve_answers_on_root() {
    let mut child = magpen()
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect(&line).to_string();
    let mut s = std::net::TcpStream::connect(&addr).unwrap();
    s.write_all(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    child.kill().unwrap();
    let _ = child.wait();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
}
