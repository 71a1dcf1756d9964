use std::collections::BTreeMap;
use std::path::Path;

use magpen_core::config::ExperimentConfig;
use magpen_core::experiment::{run, Selection};
use magpen_core::metrics::{pen_path_errors, session_metrics};
use magpen_core::shapes::ShapeSpec;
use magpen_core::sim::{curvature_sweep, dispersion_experiment, run_scenario, ScenarioConfig, Strategy};

use crate::Outcome;

fn scenario(config: &ExperimentConfig, name: &str) -> Result<ScenarioConfig, String> {
    config
        .scenarios
        .iter()
        .find(|s| s.name == name)
        .cloned()
        .ok_or_else(|| format!("scenario `{name}` missing from the default configuration"))
}

pub fn error_correction() -> Result<Outcome, String> {
    let config = ExperimentConfig::default();
    let ctrl = config.controller().map_err(|e| e.to_string())?;
    let base = scenario(&config, "error_correction")?;
    let mut worst_time: f64 = 0.0;
    let mut misses = Vec::new();
    let mut runs = 0;
    for named in &config.suite.shapes {
        for side in [1.0, -1.0] {
            for seed in 1..=2 {
                let mut sc = base.clone();
                sc.name = format!("{}_{}_{seed}", named.name, if side > 0.0 { "left" } else { "right" });
                sc.shape = named.spec.clone();
                sc.initial_offset = [-0.005, 0.01 * side];
                sc.seed = seed;
                sc.user.jitter = config.suite.jitter;
                let path = sc.shape.build().map_err(|e| e.to_string())?;
                let trace = run_scenario(&sc, &ctrl).map_err(|e| e.to_string())?;
                let errors = pen_path_errors(&trace, &path);
                runs += 1;
                let start_error = errors.first().copied().unwrap_or(0.0);
                if start_error < 9.5e-3 {
                    return Err(format!("{}: start error {:.1} mm", sc.name, start_error * 1e3));
                }
                match trace.rows.iter().zip(&errors).find(|(_, e)| **e < 2e-3) {
                    Some((row, _)) if row.t <= sc.duration => worst_time = worst_time.max(row.t),
                    _ => misses.push(sc.name.clone()),
                }
            }
        }
    }
    let detail = if misses.is_empty() {
        format!("{runs} starts 10 mm off the path, all below 2 mm after at most {worst_time:.2} s")
    } else {
        format!("{} of {runs} starts never came within 2 mm in 3 s: {}", misses.len(), misses.join(", "))
    };
    Ok(Outcome::new(misses.is_empty(), detail))
}

pub fn strategy_ordering() -> Result<Outcome, String> {
    let config = ExperimentConfig::default();
    let ctrl = config.controller().map_err(|e| e.to_string())?;
    let mut sums: BTreeMap<&'static str, (f64, f64, usize)> = BTreeMap::new();
    for seed in 1..=20 {
        for sc in config.suite.scenarios(seed) {
            let path = sc.shape.build().map_err(|e| e.to_string())?;
            let trace = run_scenario(&sc, &ctrl).map_err(|e| e.to_string())?;
            let m = session_metrics(&trace, &path).map_err(|e| format!("{}: {e}", sc.name))?;
            let e = sums.entry(sc.strategy.name()).or_default();
            e.0 += m.mean_pen_path;
            e.1 += m.mean_pen_em;
            e.2 += 1;
        }
    }
    let mean = |s: Strategy| {
        let (a, b, n) = sums[s.name()];
        (a / n as f64, b / n as f64)
    };
    let (ol, mpc, mpcc) = (mean(Strategy::Ol), mean(Strategy::Mpc), mean(Strategy::Mpcc));
    let ordered = mpcc.0 < mpc.0 && mpcc.0 < ol.0 && mpcc.1 < mpc.1 && mpcc.1 < ol.1;

    let two_h = 2.0 * ctrl.model.h;
    let mut pause_text = Vec::new();
    let mut pause_ok = true;
    for (name, must_exceed) in [("pause_ol", true), ("pause_mpcc", false)] {
        let sc = scenario(&config, name)?;
        let trace = run_scenario(&sc, &ctrl).map_err(|e| e.to_string())?;
        let max = trace.rows.iter().map(|r| (r.pen() - r.magnet()).norm()).fold(0.0, f64::max);
        pause_ok &= if must_exceed { max > two_h } else { max <= two_h };
        pause_text.push(format!("{name} max pen-em {:.1} mm", max * 1e3));
    }
    Ok(Outcome::new(
        ordered && pause_ok,
        format!(
            "mean pen-path / pen-em over seeds 1-20: mpcc {:.2}/{:.2} mm, mpc {:.2}/{:.2} mm, ol {:.2}/{:.2} mm; 2h = {:.1} mm, {}",
            mpcc.0 * 1e3,
            mpcc.1 * 1e3,
            mpc.0 * 1e3,
            mpc.1 * 1e3,
            ol.0 * 1e3,
            ol.1 * 1e3,
            two_h * 1e3,
            pause_text.join(", ")
        ),
    ))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

pub fn curvature() -> Result<Outcome, String> {
    let config = ExperimentConfig::default();
    let ctrl = config.controller().map_err(|e| e.to_string())?;
    let settings = &config.curvature;
    let template = settings.template();
    let levels = curvature_sweep(&settings.sweep, &template, &ctrl).map_err(|e| e.to_string())?;
    let means: Vec<f64> = levels.iter().map(|l| l.mean_error).collect();
    let drops: Vec<String> = means
        .windows(2)
        .zip(&levels[1..])
        .filter(|(w, _)| w[1] < w[0])
        .map(|(_, l)| format!("{:.0}", l.turn_deg))
        .collect();

    let mut sharp = template.clone();
    sharp.shape = ShapeSpec::Corner {
        vertex_mm: settings.sweep.vertex_mm,
        leg_mm: settings.sweep.leg_mm,
        turn_deg: settings.sweep.max_turn_deg,
    };
    let path = sharp.shape.build().map_err(|e| e.to_string())?;
    let corner_error = |v_c: f64| -> Result<f64, String> {
        let mut sc = sharp.clone();
        sc.user.v_c = v_c;
        let trace = run_scenario(&sc, &ctrl).map_err(|e| e.to_string())?;
        Ok(mean(&pen_path_errors(&trace, &path)))
    };
    let slow = corner_error(template.user.v_c)?;
    let fast = corner_error(2.0 * template.user.v_c)?;

    let series: Vec<String> = means.iter().map(|m| format!("{:.2}", m * 1e3)).collect();
    let mut detail = format!("mean error (mm) by turn: [{}]", series.join(", "));
    if !drops.is_empty() {
        detail.push_str(&format!("; decreases at {} deg", drops.join(", ")));
    }
    detail.push_str(&format!(
        "; sharpest corner {:.2} mm at v_c, {:.2} mm at 2 v_c",
        slow * 1e3,
        fast * 1e3
    ));
    Ok(Outcome::new(drops.is_empty() && fast > slow, detail))
}

pub fn dispersion() -> Result<Outcome, String> {
    let config = ExperimentConfig::default();
    let model = config.model().map_err(|e| e.to_string())?;
    let stop = config.dispersion.stop_distance.unwrap_or(0.002);
    let stats = dispersion_experiment(&model, &config.dispersion.resolve(&model)).map_err(|e| e.to_string())?;
    Ok(Outcome::new(
        (stats.mean - stop).abs() <= 0.5e-3,
        format!(
            "stop distance {:.1} mm: mean final offset {:.2} mm, sd {:.2} mm over {} returns",
            stop * 1e3,
            stats.mean * 1e3,
            stats.sd * 1e3,
            stats.offsets.len()
        ),
    ))
}

fn files_under(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| format!("{}: {e}", dir.display()))? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).map_err(|e| e.to_string())?.display().to_string();
                out.insert(rel, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

pub fn determinism() -> Result<Outcome, String> {
    let config = ExperimentConfig::default();
    let selection = Selection {
        suite: true,
        scenarios: vec!["pause_mpcc".into(), "error_correction".into()],
        seeds: Some(vec![7]),
        strategy: None,
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let report = run(&config, &selection, Some(&tmp.path().join(name)), None).map_err(|e| e.to_string())?;
        if !report.success() {
            return Err(format!("run failed: {:?}", report.failed));
        }
        runs.push(files_under(&report.dir.join("traces"))?);
    }
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    let passed = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    Ok(Outcome::new(
        passed,
        format!(
            "{} trace files ({bytes} bytes) from seed 7 written twice, {} differ",
            a.len(),
            differing.len() + a.len().abs_diff(b.len())
        ),
    ))
}
