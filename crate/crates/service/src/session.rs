//! Transport-free session state: sample-and-hold pen input, one control
//! tick per call, optional assisted pen.

use magpen_core::em::PlanarForce;
use magpen_core::geom::Vec2;
use magpen_core::mpcc::ControllerConfig;
use magpen_core::path::ReferencePath;
use magpen_core::sim::{Guidance, SimError, UserParams};
use magpen_core::trace::{SessionTrace, TraceRow};

use crate::protocol::{ErrorCode, PenSample, ServerMessage, StartRequest, StateFrame};

/// Seconds without a pen sample after which a session reports `paused`.
pub const PAUSE_TIMEOUT: f64 = 2.0;

/// Server-side parameters shared by all sessions.
#[derive(Debug, Clone)]
pub struct SessionSettings {
    pub ctrl: ControllerConfig,
    /// Reference speed of the timed strategies (m/s).
    pub v_ref: f64,
    /// Blend weights of the assisted pen.
    pub user: UserParams,
    pub pause_timeout: f64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        SessionSettings {
            ctrl: ControllerConfig::default(),
            v_ref: 0.2,
            user: UserParams::default(),
            pause_timeout: PAUSE_TIMEOUT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("path: {0}")]
    Path(#[from] magpen_core::path::PathError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("weights: {0}")]
    Weights(#[from] magpen_core::mpcc::MpccError),
}

impl SessionError {
    pub fn to_message(&self) -> ServerMessage {
        ServerMessage::error(ErrorCode::BadStart, self.to_string())
    }
}

/// One guided drawing session.
#[derive(Debug)]
pub struct Session {
    guidance: Option<Guidance>,
    request: StartRequest,
    settings: SessionSettings,
    path: ReferencePath,
    raw: Option<Vec2>,
    raw_at_last_tick: Option<Vec2>,
    pen: Vec2,
    last_force: PlanarForce,
    last_sample_at: f64,
    ticks: u64,
    rows: Vec<TraceRow>,
}

fn mm(v: Vec2) -> [f64; 2] {
    [v.x * 1e3, v.y * 1e3]
}

impl Session {
    pub fn start(request: &StartRequest, settings: &SessionSettings) -> Result<Self, SessionError> {
        let path = request.path.build()?;
        let mut settings = settings.clone();
        if let Some(w) = request.weights {
            settings.ctrl.weights = w;
        }
        settings.ctrl.validate()?;
        settings.user.validate()?;
        Ok(Session {
            guidance: None,
            request: request.clone(),
            settings,
            path,
            raw: None,
            raw_at_last_tick: None,
            pen: Vec2::zeros(),
            last_force: PlanarForce::default(),
            last_sample_at: 0.0,
            ticks: 0,
            rows: Vec::new(),
        })
    }

    pub fn request(&self) -> &StartRequest {
        &self.request
    }

    pub fn path(&self) -> &ReferencePath {
        &self.path
    }

    pub fn dt(&self) -> f64 {
        self.settings.ctrl.dt
    }

    /// Time of the next tick (s).
    pub fn now(&self) -> f64 {
        self.ticks as f64 * self.dt()
    }

    /// Latest sample wins; it is clamped into the workspace.
    pub fn pen(&mut self, sample: &PenSample) -> Result<(), ServerMessage> {
        if !(sample.t.is_finite() && sample.x_mm.is_finite() && sample.y_mm.is_finite()) {
            return Err(ServerMessage::error(ErrorCode::BadSample, "pen sample must be finite"));
        }
        let p = Vec2::new(sample.x_mm * 1e-3, sample.y_mm * 1e-3);
        self.raw = Some(self.settings.ctrl.sets.workspace.clamp(p));
        self.last_sample_at = self.now();
        Ok(())
    }

    /// Runs one control period. Returns `None` until the first pen sample.
    pub fn tick(&mut self) -> Result<Option<StateFrame>, SessionError> {
        let Some(raw) = self.raw else {
            return Ok(None);
        };
        let t = self.now();
        let workspace = self.settings.ctrl.sets.workspace;
        match self.raw_at_last_tick {
            None => self.pen = raw,
            Some(prev) if self.request.assist => {
                let delta = raw - prev;
                let u = self.settings.user;
                let step = delta * u.w_v + self.last_force.direction() * (u.w_m * delta.norm());
                self.pen = workspace.clamp(self.pen + step);
            }
            Some(_) => self.pen = raw,
        }
        self.raw_at_last_tick = Some(raw);

        let guidance = match &mut self.guidance {
            Some(g) => g,
            None => self.guidance.insert(Guidance::new(
                self.request.strategy,
                &self.settings.ctrl,
                self.path.clone(),
                self.settings.v_ref,
                self.pen,
            )?),
        };
        let (row, fa) = guidance.tick(self.pen, self.pen, t);
        self.last_force = fa;
        self.rows.push(row);
        self.ticks += 1;
        Ok(Some(StateFrame {
            t,
            magnet_mm: mm(row.magnet()),
            alpha: row.alpha,
            theta: row.theta * 1e3,
            s_theta_mm: mm(row.setpoint()),
            force_mN: [row.force[0] * 1e3, row.force[1] * 1e3],
            assisted_pen_mm: mm(self.pen),
            cost: row.cost,
            paused: t - self.last_sample_at > self.settings.pause_timeout,
        }))
    }

    pub fn trace(&self) -> SessionTrace {
        SessionTrace {
            rows: self.rows.clone(),
        }
    }
}

/// Replays timestamped samples through a session at the control period.
///
/// Sample `i` becomes visible at the first tick whose time, counted from
/// the first sample, is not earlier than `t_i - t_0`. Ticks continue for
/// `tail` seconds after the last sample.
pub fn replay(
    request: &StartRequest,
    samples: &[PenSample],
    settings: &SessionSettings,
    tail: f64,
) -> Result<(Vec<StateFrame>, SessionTrace), SessionError> {
    let mut session = Session::start(request, settings)?;
    let Some(first) = samples.first() else {
        return Ok((Vec::new(), session.trace()));
    };
    let dt = session.dt();
    let span = samples.last().map_or(0.0, |s| s.t - first.t).max(0.0) + tail.max(0.0);
    let ticks = (span / dt + 1e-9).floor() as usize + 1;
    let mut next = 0;
    let mut frames = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        let now = session.now();
        while next < samples.len() && samples[next].t - first.t <= now + 1e-9 {
            let _ = session.pen(&samples[next]);
            next += 1;
        }
        if let Some(frame) = session.tick()? {
            frames.push(frame);
        }
    }
    Ok((frames, session.trace()))
}
