//! Timed reference strategies: open loop and timed MPC.

use serde::{Deserialize, Serialize};

use crate::dynamics::SystemState;
use crate::geom::Vec2;
use crate::mpcc::{Controller, ControllerConfig, MpccError, ProgressLaw};
use crate::path::ReferencePath;

/// Setpoint advancing along the path at a fixed speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedReference {
    /// Reference speed (m/s).
    pub v_ref: f64,
    /// Time at which the setpoint leaves `s(0)` (s).
    pub start: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("reference speed must be non-negative and finite, got {0}")]
    BadSpeed(f64),
}

impl TimedReference {
    pub fn new(v_ref: f64, start: f64) -> Result<Self, BaselineError> {
        if !(v_ref >= 0.0 && v_ref.is_finite()) {
            return Err(BaselineError::BadSpeed(v_ref));
        }
        Ok(TimedReference { v_ref, start })
    }

    /// Scheduled progress at time `t`, held at the path end.
    pub fn theta_at(&self, path: &ReferencePath, t: f64) -> f64 {
        (self.v_ref * (t - self.start).max(0.0)).min(path.length())
    }
}

/// Open-loop magnet command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagnetCommand {
    pub position: Vec2,
    pub alpha: f64,
    pub theta: f64,
}

/// Magnet placed on the timed setpoint at full strength, ignoring the pen.
pub fn open_loop_tick(path: &ReferencePath, timed: &TimedReference, t: f64) -> MagnetCommand {
    let theta = timed.theta_at(path, t);
    MagnetCommand {
        position: path.eval(theta).point,
        alpha: 1.0,
        theta,
    }
}

/// Timed MPC: the contouring cost with progress fixed to the schedule.
pub fn mpc_controller(
    config: ControllerConfig,
    path: ReferencePath,
    timed: &TimedReference,
    initial: SystemState,
) -> Result<Controller, MpccError> {
    Controller::new(
        config,
        path,
        ProgressLaw::Timed {
            v_ref: timed.v_ref,
            start: timed.start,
        },
        initial,
    )
}
