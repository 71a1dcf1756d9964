//! Experiment configuration: JSON with comments, versioned and validated.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::dynamics::{AdmissibleSets, KalmanParams};
use crate::em::{MagnetModel, MagnetParams};
use crate::mpcc::{ControllerConfig, CostWeights, SolverOptions};
use crate::sim::{
    CurvatureSweep, DispersionConfig, Pause, ScenarioConfig, Strategy, SuiteConfig, UserParams,
};
use crate::shapes::ShapeSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Published JSON schema of [`ExperimentConfig`], kept in sync by a test.
pub const PUBLISHED_SCHEMA: &str = include_str!("../schema/experiment.schema.json");

/// Settings of the corner sharpness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct CurvatureSettings {
    pub sweep: CurvatureSweep,
    pub strategy: Strategy,
    pub user: UserParams,
    pub v_ref: f64,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub measurement_noise: f64,
}

impl Default for CurvatureSettings {
    fn default() -> Self {
        CurvatureSettings {
            sweep: CurvatureSweep::default(),
            strategy: Strategy::Mpcc,
            user: UserParams::default(),
            v_ref: 0.2,
            duration: 8.0,
            dt: 0.01,
            seed: 1,
            measurement_noise: 1e-4,
        }
    }
}

impl CurvatureSettings {
    /// Scenario run at every level; its shape is replaced by the corner.
    pub fn template(&self) -> ScenarioConfig {
        ScenarioConfig {
            name: "curvature".into(),
            shape: ShapeSpec::Corner {
                vertex_mm: self.sweep.vertex_mm,
                leg_mm: self.sweep.leg_mm,
                turn_deg: 0.0,
            },
            strategy: self.strategy,
            start_theta: 0.0,
            initial_offset: [0.0, 0.0],
            duration: self.duration,
            seed: self.seed,
            dt: self.dt,
            user: self.user,
            pause: None,
            v_ref: self.v_ref,
            measurement_noise: self.measurement_noise,
            finish_at_end: true,
            record_timing: false,
        }
    }
}

/// Settings of the passive-pen dispersion experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionSettings {
    /// When set, the friction threshold is the full-power pull at this
    /// distance (m), overriding `experiment.friction`.
    pub stop_distance: Option<f64>,
    pub experiment: DispersionConfig,
}

impl Default for DispersionSettings {
    fn default() -> Self {
        DispersionSettings {
            stop_distance: Some(0.002),
            experiment: DispersionConfig::default(),
        }
    }
}

impl DispersionSettings {
    pub fn resolve(&self, model: &MagnetModel) -> DispersionConfig {
        match self.stop_distance {
            Some(d) => DispersionConfig {
                friction: DispersionConfig::with_stop_distance(model, d).friction,
                ..self.experiment
            },
            None => self.experiment,
        }
    }
}

/// Everything a run needs. Missing fields take their defaults, so an empty
/// object reproduces the standard suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub magnet: MagnetParams,
    pub weights: CostWeights,
    pub sets: AdmissibleSets,
    pub kalman: KalmanParams,
    pub solver: SolverOptions,
    /// Seeds of the standard suite.
    pub seeds: Vec<u64>,
    pub suite: SuiteConfig,
    /// Named scenarios selectable with `--scenario`.
    pub scenarios: Vec<ScenarioConfig>,
    pub curvature: CurvatureSettings,
    pub dispersion: DispersionSettings,
    /// Root of the timestamped run directories.
    pub output_dir: PathBuf,
}

/// Scenarios bundled with the default configuration.
pub fn default_scenarios() -> Vec<ScenarioConfig> {
    let suite = SuiteConfig::default();
    let sinusoid = suite.shapes[0].spec.clone();
    let base = ScenarioConfig {
        name: String::new(),
        shape: sinusoid,
        strategy: Strategy::Mpcc,
        start_theta: 0.04,
        initial_offset: [-0.005, 0.01],
        duration: 3.0,
        seed: 1,
        dt: 0.01,
        user: UserParams::default(),
        pause: None,
        v_ref: suite.v_ref,
        measurement_noise: 1e-4,
        finish_at_end: true,
        record_timing: false,
    };
    let mut out = vec![ScenarioConfig {
        name: "error_correction".into(),
        ..base.clone()
    }];
    for strategy in Strategy::ALL {
        out.push(ScenarioConfig {
            name: format!("pause_{}", strategy.name()),
            strategy,
            start_theta: 0.0,
            initial_offset: [0.0, 0.0],
            duration: 13.0,
            pause: Some(Pause {
                start: 0.5,
                duration: 5.0,
            }),
            ..base.clone()
        });
    }
    out
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            magnet: MagnetParams::default(),
            weights: CostWeights::default(),
            sets: AdmissibleSets::default(),
            kalman: KalmanParams::default(),
            solver: SolverOptions::default(),
            seeds: (1..=20).collect(),
            suite: SuiteConfig::default(),
            scenarios: default_scenarios(),
            curvature: CurvatureSettings::default(),
            dispersion: DispersionSettings::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("at `{field}` (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("`{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Replaces `//` and `/* */` comments outside strings with spaces, keeping
/// newlines so reported positions still match the original text.
pub fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            if c == '\\' {
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match (c, chars.peek()) {
            ('"', _) => {
                in_string = true;
                out.push(c);
            }
            ('/', Some('/')) => {
                out.push_str("  ");
                chars.next();
                while let Some(&n) = chars.peek() {
                    if n == '\n' {
                        break;
                    }
                    out.push(' ');
                    chars.next();
                }
            }
            ('/', Some('*')) => {
                out.push_str("  ");
                chars.next();
                let mut prev = '\0';
                for n in chars.by_ref() {
                    out.push(if n == '\n' { '\n' } else { ' ' });
                    if prev == '*' && n == '/' {
                        break;
                    }
                    prev = n;
                }
            }
            _ => out.push(c),
        }
    }
    out
}

impl ExperimentConfig {
    /// Parses and validates a configuration text.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let stripped = strip_comments(text);
        let mut de = serde_json::Deserializer::from_str(&stripped);
        let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ConfigError::Parse {
                field,
                line: inner.line(),
                column: inner.column(),
                message: inner.to_string(),
            }
        })?;
        de.end().map_err(|e| ConfigError::Parse {
            field: ".".into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Pretty JSON of the fully resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<MagnetModel, ConfigError> {
        MagnetModel::new(self.magnet).map_err(|e| invalid("magnet", e))
    }

    pub fn controller(&self) -> Result<ControllerConfig, ConfigError> {
        let ctrl = ControllerConfig {
            weights: self.weights,
            model: self.model()?,
            sets: self.sets,
            kalman: self.kalman,
            solver: self.solver,
            ..ControllerConfig::default()
        };
        ctrl.validate().map_err(|e| invalid("weights/sets", e))?;
        Ok(ctrl)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version {
                found: self.schema_version,
            });
        }
        self.controller()?;
        if !(self.solver.max_iterations > 0 && self.solver.tolerance > 0.0) {
            return Err(invalid("solver", "max_iterations and tolerance must be positive"));
        }
        if self.kalman.measurement_noise <= 0.0 || self.kalman.accel_noise <= 0.0 {
            return Err(invalid("kalman", "noise levels must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }

        let s = &self.suite;
        let [lo, hi] = s.v_c_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid("suite.v_c_range", "needs 0 < low <= high"));
        }
        if s.shapes.is_empty() {
            return Err(invalid("suite.shapes", "at least one shape is required"));
        }
        let mut names = BTreeSet::new();
        for (i, named) in s.shapes.iter().enumerate() {
            if !names.insert(named.name.as_str()) || named.name.contains(['/', '\\', '_']) || named.name.is_empty() {
                return Err(invalid(
                    format!("suite.shapes[{i}].name"),
                    format!("`{}` must be unique, non-empty and free of `/`, `\\` and `_`", named.name),
                ));
            }
            named
                .spec
                .build()
                .map_err(|e| invalid(format!("suite.shapes[{i}].spec"), e))?;
        }
        if let Some(sc) = s.scenarios(self.seeds[0]).first() {
            sc.validate().map_err(|e| invalid("suite", e))?;
        }

        let mut names = BTreeSet::new();
        for (i, sc) in self.scenarios.iter().enumerate() {
            let field = format!("scenarios[{i}]");
            if !names.insert(sc.name.as_str()) || sc.name.is_empty() || sc.name.contains(['/', '\\']) {
                return Err(invalid(
                    format!("{field}.name"),
                    format!("`{}` must be unique, non-empty and free of path separators", sc.name),
                ));
            }
            if matches!(sc.name.as_str(), "curvature_sweep" | "dispersion") {
                return Err(invalid(format!("{field}.name"), "name is reserved for a built-in experiment"));
            }
            sc.validate().map_err(|e| invalid(&field, e))?;
            sc.shape.build().map_err(|e| invalid(format!("{field}.shape"), e))?;
        }

        let c = &self.curvature;
        if c.sweep.levels < 2 {
            return Err(invalid("curvature.sweep.levels", "needs at least 2 levels"));
        }
        c.template().validate().map_err(|e| invalid("curvature", e))?;

        let d = self.dispersion.experiment;
        if d.repetitions == 0 {
            return Err(invalid("dispersion.experiment.repetitions", "must be at least 1"));
        }
        if let Some(sd) = self.dispersion.stop_distance {
            if !(sd > 0.0 && sd < 2.0 * self.magnet.h) {
                return Err(invalid("dispersion.stop_distance", "must lie in (0, 2h)"));
            }
        }
        Ok(())
    }
}

/// JSON schema of the configuration format.
pub fn json_schema() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c = ExperimentConfig::from_text("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.seeds, (1..=20).collect::<Vec<_>>());
    }

    #[test]
    fn comments_are_ignored() {
        let text = r#"{
            // single line
            "seeds": [3, /* inline */ 4],
            "output_dir": "a//b/*c*/"
        }"#;
        let c = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(c.seeds, vec![3, 4]);
        assert_eq!(c.output_dir, PathBuf::from("a//b/*c*/"));
        assert_eq!(strip_comments("/*x\ny*/1").lines().count(), 2);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = ExperimentConfig::from_text(r#"{"weights": {"w_l": "big"}}"#).unwrap_err();
        match err {
            ConfigError::Parse { field, line, .. } => {
                assert_eq!(field, "weights.w_l");
                assert_eq!(line, 1);
            }
            other => panic!("{other}"),
        }
        let err = ExperimentConfig::from_text("{\n\"weigths\": {}}").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn semantic_errors() {
        let bad = [
            r#"{"schema_version": 2}"#,
            r#"{"weights": {"w_l": -1}}"#,
            r#"{"seeds": []}"#,
            r#"{"suite": {"v_c_range": [0.2, 0.1]}}"#,
            r#"{"magnet": {"h": 0}}"#,
            r#"{"curvature": {"sweep": {"levels": 1}}}"#,
            r#"{"dispersion": {"stop_distance": 1.0}}"#,
        ];
        for text in bad {
            assert!(ExperimentConfig::from_text(text).is_err(), "{text}");
        }
        let mut c = ExperimentConfig::default();
        c.scenarios.push(c.scenarios[0].clone());
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_text(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn dispersion_friction_from_stop_distance() {
        let m = MagnetModel::reference();
        let d = DispersionSettings::default().resolve(&m);
        assert_eq!(d.friction, DispersionConfig::with_stop_distance(&m, 0.002).friction);
        let none = DispersionSettings {
            stop_distance: None,
            ..Default::default()
        };
        assert_eq!(none.resolve(&m).friction, 0.0);
    }

    #[test]
    fn published_schema_is_current() {
        assert_eq!(
            PUBLISHED_SCHEMA,
            json_schema(),
            "regenerate with `magpen schema > crates/core/schema/experiment.schema.json`"
        );
    }
}
