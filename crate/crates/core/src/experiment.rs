//! Experiment orchestration and on-disk artifacts.
//!
//! A run writes into `<output_dir>/run-<UTC timestamp>/`:
//!
//! ```text
//! config.json              resolved configuration
//! traces/<name>.csv        one trace per scenario, also as .jsonl
//! metrics/<name>.json      per-session metrics
//! metrics.csv              one row per session
//! plots/*.csv              error over time, histograms, strategy summary
//! curvature.csv            per-level errors of the corner sweep
//! dispersion.json          passive-pen offsets
//! timing.json              wall-clock time per scenario
//! failures.json            scenarios that could not complete, if any
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{pen_path_errors, session_metrics, MetricsReport};
use crate::mpcc::ControllerConfig;
use crate::sim::{curvature_sweep, dispersion_experiment, run_scenario, ScenarioConfig, Strategy};
use crate::trace::SessionTrace;

/// Histogram bin width of the error plots (m).
pub const HISTOGRAM_BIN: f64 = 0.5e-3;

/// What to run. The default selects everything in the configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    /// Run the seeded standard suite.
    pub suite: bool,
    /// Named scenarios, including the built-ins `curvature_sweep` and
    /// `dispersion`.
    pub scenarios: Vec<String>,
    /// Replaces the configured seeds and the seeds of named scenarios.
    pub seeds: Option<Vec<u64>>,
    /// Keeps only scenarios of this strategy; also sets the sweep strategy.
    pub strategy: Option<Strategy>,
}

impl Selection {
    fn everything(&self) -> bool {
        !self.suite && self.scenarios.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub dir: PathBuf,
    pub completed: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

impl RunReport {
    pub fn success(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Applies the selection's overrides and returns the scenarios to simulate.
pub fn plan(config: &mut ExperimentConfig, selection: &Selection) -> Result<Vec<ScenarioConfig>, ExperimentError> {
    if let Some(seeds) = &selection.seeds {
        config.seeds = seeds.clone();
        if let Some(&first) = seeds.first() {
            for sc in &mut config.scenarios {
                sc.seed = first;
            }
        }
    }
    if let Some(s) = selection.strategy {
        config.curvature.strategy = s;
    }
    for name in &selection.scenarios {
        let builtin = matches!(name.as_str(), "curvature_sweep" | "dispersion");
        if !builtin && !config.scenarios.iter().any(|s| &s.name == name) {
            return Err(ExperimentError::UnknownScenario(name.clone()));
        }
    }
    let keep = |s: &ScenarioConfig| selection.strategy.is_none_or(|st| st == s.strategy);
    let mut out = Vec::new();
    if selection.suite || selection.everything() {
        for &seed in &config.seeds {
            out.extend(config.suite.scenarios(seed).into_iter().filter(keep));
        }
    }
    for sc in &config.scenarios {
        if (selection.everything() || selection.scenarios.contains(&sc.name)) && keep(sc) {
            out.push(sc.clone());
        }
    }
    Ok(out)
}

fn wants(selection: &Selection, name: &str) -> bool {
    selection.everything() || selection.scenarios.iter().any(|s| s == name)
}

/// Creates `root/run-<timestamp>[-n]`.
pub fn create_run_dir(root: &Path) -> Result<PathBuf, ExperimentError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let stamp = chrono::Utc::now().format("run-%Y%m%dT%H%M%SZ").to_string();
    let mut dir = root.join(&stamp);
    let mut n = 1;
    while dir.exists() {
        n += 1;
        dir = root.join(format!("{stamp}-{n}"));
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn csv_text<R: AsRef<[u8]>>(header: &[&str], rows: impl IntoIterator<Item = Vec<R>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Counts of `values` in bins of width `bin` starting at zero.
pub fn histogram(values: &[f64], bin: f64) -> Vec<usize> {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut counts = vec![0; (max / bin).floor() as usize + 1];
    let last = counts.len() - 1;
    for v in values {
        counts[((v / bin).floor() as usize).min(last)] += 1;
    }
    counts
}

/// Simulates one scenario and writes its trace, metrics and plot series.
pub fn run_one(dir: &Path, scenario: &ScenarioConfig, ctrl: &ControllerConfig) -> Result<MetricsReport, String> {
    let path = scenario.shape.build().map_err(|e| e.to_string())?;
    let trace = run_scenario(scenario, ctrl).map_err(|e| e.to_string())?;
    let metrics = session_metrics(&trace, &path).map_err(|e| e.to_string())?;
    write_session(dir, &scenario.name, &trace, &path, &metrics).map_err(|e| e.to_string())?;
    Ok(metrics)
}

/// Persists a finished session the same way for simulated and live runs.
pub fn write_session(
    dir: &Path,
    name: &str,
    trace: &SessionTrace,
    path: &crate::path::ReferencePath,
    metrics: &MetricsReport,
) -> Result<(), ExperimentError> {
    let mut csv_buf = Vec::new();
    trace
        .write_csv(&mut csv_buf)
        .map_err(|e| ExperimentError::Io {
            path: dir.join("traces"),
            source: io::Error::other(e.to_string()),
        })?;
    write_file(&dir.join("traces").join(format!("{name}.csv")), &csv_buf)?;
    let mut jsonl = Vec::new();
    trace.write_jsonl(&mut jsonl).map_err(|e| ExperimentError::Io {
        path: dir.join("traces"),
        source: io::Error::other(e.to_string()),
    })?;
    write_file(&dir.join("traces").join(format!("{name}.jsonl")), &jsonl)?;
    write_file(
        &dir.join("metrics").join(format!("{name}.json")),
        serde_json::to_string_pretty(metrics).expect("metrics serialize").as_bytes(),
    )?;

    let errors = pen_path_errors(trace, path);
    let series = trace.rows.iter().zip(&errors).map(|(r, e)| {
        vec![
            r.t.to_string(),
            e.to_string(),
            (r.pen() - r.magnet()).norm().to_string(),
        ]
    });
    write_file(
        &dir.join("plots").join(format!("{name}_error.csv")),
        &csv_text(&["t", "pen_path_m", "pen_em_m"], series),
    )?;
    let hist = histogram(&errors, HISTOGRAM_BIN);
    let rows = hist.iter().enumerate().map(|(i, c)| {
        vec![
            (i as f64 * HISTOGRAM_BIN * 1e3).to_string(),
            ((i + 1) as f64 * HISTOGRAM_BIN * 1e3).to_string(),
            c.to_string(),
        ]
    });
    write_file(
        &dir.join("plots").join(format!("{name}_histogram.csv")),
        &csv_text(&["bin_lo_mm", "bin_hi_mm", "count"], rows),
    )
}

fn strategy_of(name: &str, scenarios: &[ScenarioConfig]) -> Option<Strategy> {
    scenarios.iter().find(|s| s.name == name).map(|s| s.strategy)
}

/// Runs the selected experiments under `config`, writing artifacts into a
/// fresh run directory below `out` (or the configured output directory).
///
/// Failing scenarios are recorded and the run continues.
pub fn run(
    config: &ExperimentConfig,
    selection: &Selection,
    out: Option<&Path>,
    threads: Option<usize>,
) -> Result<RunReport, ExperimentError> {
    let mut config = config.clone();
    let scenarios = plan(&mut config, selection)?;
    config.validate()?;
    let ctrl = config.controller()?;
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
    let dir = create_run_dir(&root)?;
    write_file(&dir.join("config.json"), config.to_json().as_bytes())?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let started = Instant::now();
    let results: Vec<(String, Result<MetricsReport, String>, f64)> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|sc| {
                let t0 = Instant::now();
                let r = run_one(&dir, sc, &ctrl);
                (sc.name.clone(), r, t0.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });

    let mut completed = Vec::new();
    let mut failed = BTreeMap::new();
    let mut timing = BTreeMap::new();
    let mut metric_rows = Vec::new();
    let mut by_strategy: BTreeMap<&'static str, Vec<MetricsReport>> = BTreeMap::new();
    for (name, result, ms) in &results {
        timing.insert(name.clone(), *ms);
        match result {
            Ok(m) => {
                completed.push(name.clone());
                let mut row = vec![name.clone()];
                row.extend(m.csv_fields());
                metric_rows.push(row);
                if let Some(s) = strategy_of(name, &scenarios) {
                    by_strategy.entry(s.name()).or_default().push(*m);
                }
            }
            Err(e) => {
                failed.insert(name.clone(), e.clone());
            }
        }
    }
    if !scenarios.is_empty() {
        let mut header = vec!["name"];
        header.extend(MetricsReport::CSV_HEADER);
        write_file(&dir.join("metrics.csv"), &csv_text(&header, metric_rows))?;
        let summary = by_strategy.iter().map(|(s, ms)| {
            let n = ms.len() as f64;
            let mean = |f: fn(&MetricsReport) -> f64| (ms.iter().map(f).sum::<f64>() / n).to_string();
            vec![
                s.to_string(),
                ms.len().to_string(),
                mean(|m| m.mean_pen_path),
                mean(|m| m.mean_pen_setpoint_alongpath),
                mean(|m| m.mean_pen_em),
                mean(|m| m.frac_em_beyond_15mm),
            ]
        });
        write_file(
            &dir.join("plots").join("strategy_summary.csv"),
            &csv_text(
                &[
                    "strategy",
                    "sessions",
                    "mean_pen_path",
                    "mean_pen_setpoint_alongpath",
                    "mean_pen_em",
                    "frac_em_beyond_15mm",
                ],
                summary,
            ),
        )?;
    }

    if wants(selection, "curvature_sweep") {
        let t0 = Instant::now();
        match curvature_sweep(&config.curvature.sweep, &config.curvature.template(), &ctrl) {
            Ok(levels) => {
                let rows = levels.iter().map(|l| {
                    vec![
                        l.turn_deg.to_string(),
                        l.mean_error.to_string(),
                        l.max_error.to_string(),
                        l.hausdorff_like[0].to_string(),
                        l.hausdorff_like[1].to_string(),
                    ]
                });
                write_file(
                    &dir.join("curvature.csv"),
                    &csv_text(
                        &["turn_deg", "mean_error", "max_error", "hausdorff_drawn_ref", "hausdorff_ref_drawn"],
                        rows,
                    ),
                )?;
                let series = levels.iter().flat_map(|l| {
                    l.series
                        .iter()
                        .map(move |s| vec![l.turn_deg.to_string(), s[0].to_string(), s[1].to_string()])
                });
                write_file(
                    &dir.join("plots").join("curvature_series.csv"),
                    &csv_text(&["turn_deg", "progress", "error"], series),
                )?;
                completed.push("curvature_sweep".into());
            }
            Err(e) => {
                failed.insert("curvature_sweep".into(), e.to_string());
            }
        }
        timing.insert("curvature_sweep".into(), t0.elapsed().as_secs_f64() * 1e3);
    }

    if wants(selection, "dispersion") {
        let t0 = Instant::now();
        let d = config.dispersion.resolve(&ctrl.model);
        match dispersion_experiment(&ctrl.model, &d) {
            Ok(stats) => {
                write_file(
                    &dir.join("dispersion.json"),
                    serde_json::to_string_pretty(&stats).expect("stats serialize").as_bytes(),
                )?;
                completed.push("dispersion".into());
            }
            Err(e) => {
                failed.insert("dispersion".into(), e.to_string());
            }
        }
        timing.insert("dispersion".into(), t0.elapsed().as_secs_f64() * 1e3);
    }

    #[derive(Serialize)]
    struct Timing<'a> {
        threads: usize,
        total_ms: f64,
        wall_ms: &'a BTreeMap<String, f64>,
    }
    let timing_json = serde_json::to_string_pretty(&Timing {
        threads: pool.current_num_threads(),
        total_ms: started.elapsed().as_secs_f64() * 1e3,
        wall_ms: &timing,
    })
    .expect("timing serializes");
    write_file(&dir.join("timing.json"), timing_json.as_bytes())?;
    if !failed.is_empty() {
        let text = serde_json::to_string_pretty(&failed).expect("failures serialize");
        write_file(&dir.join("failures.json"), text.as_bytes())?;
    }
    completed.sort();
    Ok(RunReport { dir, completed, failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts() {
        assert_eq!(histogram(&[0.0, 0.2e-3, 0.6e-3, 1.6e-3], HISTOGRAM_BIN), vec![2, 1, 0, 1]);
        assert_eq!(histogram(&[], HISTOGRAM_BIN), vec![0]);
    }

    #[test]
    fn plan_filters() {
        let mut c = ExperimentConfig::default();
        let all = plan(&mut c.clone(), &Selection::default()).unwrap();
        assert_eq!(all.len(), 20 * 9 + c.scenarios.len());
        let sel = Selection {
            suite: true,
            seeds: Some(vec![7]),
            strategy: Some(Strategy::Mpcc),
            ..Default::default()
        };
        let p = plan(&mut c, &sel).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.iter().all(|s| s.seed == 7 && s.strategy == Strategy::Mpcc));
        assert_eq!(c.curvature.strategy, Strategy::Mpcc);
        let bad = Selection {
            scenarios: vec!["nope".into()],
            ..Default::default()
        };
        assert!(matches!(
            plan(&mut ExperimentConfig::default(), &bad),
            Err(ExperimentError::UnknownScenario(_))
        ));
    }
}
