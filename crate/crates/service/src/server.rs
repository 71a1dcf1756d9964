//! WebSocket endpoint `/session` and static file serving at `/`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, IntoResponse};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use magpen_core::experiment::{create_run_dir, write_session};
use magpen_core::metrics::session_metrics;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tower_http::services::ServeDir;

use crate::protocol::{ClientMessage, ErrorCode, PenSample, ServerMessage};
use crate::session::{Session, SessionSettings};

const PLACEHOLDER: &str = include_str!("../static/index.html");

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    pub settings: SessionSettings,
    /// Built UI bundle served at `/`. Without it a placeholder page is served.
    pub static_dir: Option<PathBuf>,
    /// Where finished sessions are persisted, one run directory each.
    pub trace_dir: Option<PathBuf>,
}

/// Timing of a finished control loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopReport {
    pub ticks: usize,
    /// Wall-clock time between consecutive tick starts (s).
    pub intervals: Vec<f64>,
    pub trace_dir: Option<PathBuf>,
}

impl LoopReport {
    /// Largest deviation of a tick interval from `dt` (s).
    pub fn max_jitter(&self, dt: f64) -> f64 {
        self.intervals.iter().map(|i| (i - dt).abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone)]
struct AppState {
    config: Arc<ServerConfig>,
    reports: Option<mpsc::UnboundedSender<LoopReport>>,
}

pub fn router(config: ServerConfig) -> Router {
    router_with_reports(config, None)
}

/// Like [`router`], also sending a [`LoopReport`] whenever a session ends.
pub fn router_with_reports(config: ServerConfig, reports: Option<mpsc::UnboundedSender<LoopReport>>) -> Router {
    let static_dir = config.static_dir.clone();
    let state = AppState {
        config: Arc::new(config),
        reports,
    };
    let app = Router::new().route("/session", get(session_handler)).with_state(state);
    match static_dir {
        Some(dir) if dir.is_dir() => app.fallback_service(ServeDir::new(dir)),
        _ => app.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

/// Binds `addr` and serves until the process ends.
pub async fn serve_on(addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve(listener, config).await
}

async fn session_handler(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

struct Running {
    pen: Arc<Mutex<Option<PenSample>>>,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<LoopReport>,
}

impl Running {
    async fn finish(self) -> Option<LoopReport> {
        self.stop.store(true, Ordering::SeqCst);
        tokio::task::spawn_blocking(move || self.handle.join().ok()).await.ok().flatten()
    }
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (state_tx, mut state_rx) = watch::channel::<Option<String>>(None);
    let (err_tx, mut err_rx) = mpsc::channel::<String>(32);

    let writer = tokio::spawn(async move {
        loop {
            tokio::select! {
                changed = state_rx.changed() => {
                    if changed.is_err() {
                        break;
                    }
                    let frame = state_rx.borrow_and_update().clone();
                    if let Some(text) = frame {
                        if sink.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                }
                err = err_rx.recv() => match err {
                    Some(text) => {
                        if sink.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                    }
                    None => break,
                },
            }
        }
        let _ = sink.close().await;
    });

    let state_tx = Arc::new(state_tx);
    let mut running: Option<Running> = None;
    let report_error = |msg: ServerMessage| {
        let _ = err_tx.try_send(msg.to_text());
    };

    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Binary(_) => {
                report_error(ServerMessage::error(ErrorCode::BadMessage, "binary frames are not supported"));
                continue;
            }
            Message::Close(_) => break,
            _ => continue,
        };
        match ClientMessage::from_text(&text) {
            Err(e) => report_error(e),
            Ok(ClientMessage::Start(req)) => {
                if let Some(r) = running.take() {
                    finish_loop(r, &state).await;
                }
                match Session::start(&req, &state.config.settings) {
                    Ok(session) => running = Some(spawn_loop(session, state.config.clone(), state_tx.clone())),
                    Err(e) => report_error(e.to_message()),
                }
            }
            Ok(ClientMessage::Pen(sample)) => match &running {
                Some(r) => {
                    if sample.t.is_finite() && sample.x_mm.is_finite() && sample.y_mm.is_finite() {
                        *r.pen.lock().expect("pen slot") = Some(sample);
                    } else {
                        report_error(ServerMessage::error(ErrorCode::BadSample, "pen sample must be finite"));
                    }
                }
                None => report_error(ServerMessage::error(ErrorCode::NoSession, "send `start` first")),
            },
            Ok(ClientMessage::Stop) => match running.take() {
                Some(r) => {
                    finish_loop(r, &state).await;
                    break;
                }
                None => report_error(ServerMessage::error(ErrorCode::NoSession, "no session to stop")),
            },
        }
    }
    if let Some(r) = running.take() {
        finish_loop(r, &state).await;
    }
    drop(err_tx);
    drop(state_tx);
    let _ = writer.await;
}

async fn finish_loop(running: Running, state: &AppState) {
    if let Some(report) = running.finish().await {
        if let Some(tx) = &state.reports {
            let _ = tx.send(report);
        }
    }
}

fn spawn_loop(
    mut session: Session,
    config: Arc<ServerConfig>,
    out: Arc<watch::Sender<Option<String>>>,
) -> Running {
    let pen = Arc::new(Mutex::new(None::<PenSample>));
    let stop = Arc::new(AtomicBool::new(false));
    let (pen_slot, stop_flag) = (pen.clone(), stop.clone());
    let handle = std::thread::spawn(move || {
        let dt = Duration::from_secs_f64(session.dt());
        let mut intervals = Vec::new();
        let mut last_start: Option<Instant> = None;
        let mut deadline = Instant::now();
        while !stop_flag.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now < deadline {
                std::thread::sleep(deadline - now);
            }
            let started = Instant::now();
            if let Some(prev) = last_start {
                intervals.push((started - prev).as_secs_f64());
            }
            last_start = Some(started);
            deadline += dt;
            if deadline < started {
                deadline = started + dt;
            }

            if let Some(sample) = pen_slot.lock().expect("pen slot").take() {
                let _ = session.pen(&sample);
            }
            match session.tick() {
                Ok(Some(frame)) => {
                    out.send_replace(Some(ServerMessage::State(frame).to_text()));
                }
                Ok(None) => {}
                Err(e) => {
                    out.send_replace(Some(e.to_message().to_text()));
                    break;
                }
            }
        }
        let trace_dir = config.trace_dir.as_ref().and_then(|root| persist(&session, root));
        LoopReport {
            ticks: session.trace().len(),
            intervals,
            trace_dir,
        }
    });
    Running { pen, stop, handle }
}

fn persist(session: &Session, root: &std::path::Path) -> Option<PathBuf> {
    let trace = session.trace();
    let metrics = session_metrics(&trace, session.path()).ok()?;
    let dir = create_run_dir(root).ok()?;
    let request = serde_json::to_string_pretty(session.request()).ok()?;
    std::fs::write(dir.join("session.json"), request).ok()?;
    write_session(&dir, "live", &trace, session.path(), &metrics).ok()?;
    Some(dir)
}
