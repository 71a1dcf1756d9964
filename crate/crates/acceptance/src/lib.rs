//! Acceptance checks of the guidance engine.
//!
//! Each [`Criterion`] runs a self-contained experiment, compares it with an
//! independent oracle or a stated bound and reports a one-line verdict.
//!
//! ```
//! let c = magpen_acceptance::find("em_constants").unwrap();
//! let v = c.run();
//! assert!(v.passed, "{}", v.line());
//! ```

use std::fmt::Write as _;
use std::time::{Duration, Instant};

mod behavior;
mod model;
mod solver;

/// Measured result of a check before the runtime budget is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Outcome { passed, detail }
    }
}

type CheckFn = fn() -> Result<Outcome, String>;

pub struct Criterion {
    pub id: &'static str,
    pub title: &'static str,
    /// Wall-clock limit; a slower check fails.
    pub budget: Duration,
    check: CheckFn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl Verdict {
    /// `PASS id (1.23 s of 10 s): detail`
    pub fn line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{} {} ({:.2} s of {} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        );
        s
    }
}

impl Criterion {
    pub fn run(&self) -> Verdict {
        let started = Instant::now();
        let outcome = (self.check)().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = started.elapsed();
        let mut detail = outcome.detail;
        let in_time = elapsed <= self.budget;
        if !in_time {
            detail.push_str("; over budget");
        }
        Verdict {
            id: self.id,
            title: self.title,
            passed: outcome.passed && in_time,
            detail,
            elapsed,
            budget: self.budget,
        }
    }
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

static CRITERIA: [Criterion; 12] = [
    Criterion {
        id: "em_constants",
        title: "pen dipole and force scale from the reference hardware",
        budget: secs(1),
        check: model::em_constants,
    },
    Criterion {
        id: "force_curve",
        title: "force profile peak and end points",
        budget: secs(1),
        check: model::force_curve,
    },
    Criterion {
        id: "tilt_bound",
        title: "30 degree tilt shifts the force curve by at most 3 mm",
        budget: secs(5),
        check: model::tilt_bound,
    },
    Criterion {
        id: "field_fit",
        title: "dipole constants recovered from field scans",
        budget: secs(10),
        check: model::field_fit,
    },
    Criterion {
        id: "gradients",
        title: "analytic cost gradients match central differences",
        budget: secs(30),
        check: solver::gradients,
    },
    Criterion {
        id: "grid_oracle",
        title: "two-stage solves within 5% of a brute-force grid",
        budget: secs(120),
        check: solver::grid_oracle,
    },
    Criterion {
        id: "realtime",
        title: "ten-stage solve time",
        budget: secs(60),
        check: solver::realtime,
    },
    Criterion {
        id: "error_correction",
        title: "recovery from a 10 mm off-path start",
        budget: secs(10),
        check: behavior::error_correction,
    },
    Criterion {
        id: "strategy_ordering",
        title: "contouring beats timed and open-loop guidance",
        budget: secs(120),
        check: behavior::strategy_ordering,
    },
    Criterion {
        id: "curvature_sweep",
        title: "error grows with corner sharpness",
        budget: secs(60),
        check: behavior::curvature,
    },
    Criterion {
        id: "dispersion",
        title: "passive pen settles at the friction stop distance",
        budget: secs(30),
        check: behavior::dispersion,
    },
    Criterion {
        id: "determinism",
        title: "seeded runs write identical traces",
        budget: secs(60),
        check: behavior::determinism,
    },
];

pub fn criteria() -> &'static [Criterion] {
    &CRITERIA
}

pub fn find(id: &str) -> Option<&'static Criterion> {
    CRITERIA.iter().find(|c| c.id == id)
}

/// Runs every criterion in order, calling `each` as verdicts arrive.
pub fn run_all(mut each: impl FnMut(&Verdict)) -> Vec<Verdict> {
    CRITERIA
        .iter()
        .map(|c| {
            let v = c.run();
            each(&v);
            v
        })
        .collect()
}
