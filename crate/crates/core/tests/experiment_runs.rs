use std::collections::BTreeMap;
use std::path::Path;

use magpen_core::config::ExperimentConfig;
use magpen_core::experiment::{run, Selection};
use magpen_core::sim::curvature_sweep;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if path.is_dir() {
            for (k, v) in files(&path) {
                out.insert(format!("{name}/{k}"), v);
            }
        } else {
            out.insert(name, std::fs::read(&path).unwrap());
        }
    }
    out
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let selection = Selection {
        suite: true,
        scenarios: vec!["error_correction".into(), "pause_mpcc".into()],
        seeds: Some(vec![4]),
        strategy: None,
    };
    let config = ExperimentConfig::default();
    let a = run(&config, &selection, Some(&tmp.path().join("a")), Some(1)).unwrap();
    let b = run(&config, &selection, Some(&tmp.path().join("b")), Some(1)).unwrap();
    assert!(a.success() && b.success(), "{:?} {:?}", a.failed, b.failed);
    assert_eq!(a.completed, b.completed);
    let (fa, fb) = (files(&a.dir), files(&b.dir));
    let traces: Vec<&String> = fa.keys().filter(|k| k.starts_with("traces/")).collect();
    assert!(traces.len() >= 11, "{traces:?}");
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in fa.iter().filter(|(k, _)| k.as_str() != "timing.json") {
        assert!(&fb[name] == bytes, "{name} differs");
    }
}

#[test]
fn faster_users_miss_corners_by_more() {
    let config = ExperimentConfig::default();
    let ctrl = config.controller().unwrap();
    let mut slow = config.curvature.template();
    slow.user.v_c = 0.05;
    let mut fast = slow.clone();
    fast.user.v_c = 0.1;
    let a = curvature_sweep(&config.curvature.sweep, &slow, &ctrl).unwrap();
    let b = curvature_sweep(&config.curvature.sweep, &fast, &ctrl).unwrap();
    for (s, f) in a.iter().zip(&b) {
        assert!(f.mean_error > s.mean_error, "{} deg: {} vs {}", s.turn_deg, f.mean_error, s.mean_error);
    }
}
