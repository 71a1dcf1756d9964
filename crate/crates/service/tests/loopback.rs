use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use magpen_core::metrics::session_metrics;
use magpen_core::shapes::ShapeSpec;
use magpen_core::sim::Strategy;
use magpen_core::trace::SessionTrace;
use magpen_service::protocol::{ClientMessage, ErrorCode, PenSample, ServerMessage, StartRequest, StateFrame};
use magpen_service::server::{router_with_reports, LoopReport, ServerConfig};
use magpen_service::session::{replay, SessionSettings};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

fn line_request() -> StartRequest {
    StartRequest {
        path: ShapeSpec::Line {
            start_mm: [30.0, 65.0],
            end_mm: [200.0, 65.0],
        },
        strategy: Strategy::Mpcc,
        weights: None,
        assist: false,
    }
}

async fn spawn(config: ServerConfig) -> (SocketAddr, mpsc::UnboundedReceiver<LoopReport>) {
    let (tx, rx) = mpsc::unbounded_channel();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router_with_reports(config, Some(tx));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, rx)
}

async fn connect(addr: SocketAddr) -> Ws {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    ws
}

async fn send(ws: &mut Ws, msg: &ClientMessage) {
    ws.send(Message::Text(msg.to_text().into())).await.unwrap();
}

fn pen(t: f64, x_mm: f64, y_mm: f64) -> ClientMessage {
    ClientMessage::Pen(PenSample { t, x_mm, y_mm })
}

async fn next_text(ws: &mut Ws) -> Option<String> {
    loop {
        match tokio::time::timeout(Duration::from_secs(5), ws.next()).await.ok()?? {
            Ok(Message::Text(t)) => return Some(t.to_string()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

fn parse(text: &str) -> ServerMessage {
    let v: serde_json::Value = serde_json::from_str(text).unwrap();
    assert_eq!(v["v"], 1, "{text}");
    ServerMessage::from_text(text).unwrap()
}

async fn next_error(ws: &mut Ws) -> ErrorCode {
    loop {
        match parse(&next_text(ws).await.expect("error frame")) {
            ServerMessage::Error(e) => return e.code,
            ServerMessage::State(_) => continue,
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stationary_pen_on_path_is_guided_forward() {
    let (addr, _reports) = spawn(ServerConfig::default()).await;
    let mut ws = connect(addr).await;
    send(&mut ws, &ClientMessage::Start(line_request())).await;
    send(&mut ws, &pen(0.0, 30.0, 65.0)).await;

    let mut frames: Vec<StateFrame> = Vec::new();
    let deadline = tokio::time::Instant::now() + Duration::from_millis(1500);
    while tokio::time::Instant::now() < deadline {
        let text = next_text(&mut ws).await.expect("state frame");
        match parse(&text) {
            ServerMessage::State(f) => frames.push(f),
            other => panic!("{other:?}"),
        }
    }
    send(&mut ws, &ClientMessage::Stop).await;

    assert!(frames.len() > 10, "{} frames", frames.len());
    assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
    let first = frames.first().unwrap();
    let last = frames.last().unwrap();
    assert!(last.theta > first.theta, "theta {} -> {}", first.theta, last.theta);
    assert!(frames.iter().all(|f| f.alpha <= 0.5 + 1e-9), "alpha above 0.5");
    assert!(frames.iter().all(|f| f.assisted_pen_mm == [30.0, 65.0]));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stop_persists_a_valid_trace() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServerConfig {
        trace_dir: Some(dir.path().to_path_buf()),
        ..ServerConfig::default()
    };
    let (addr, mut reports) = spawn(config).await;
    let mut ws = connect(addr).await;
    send(&mut ws, &ClientMessage::Start(line_request())).await;
    for i in 0..30 {
        send(&mut ws, &pen(i as f64 * 0.01, 30.0 + i as f64 * 0.5, 66.0)).await;
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    send(&mut ws, &ClientMessage::Stop).await;

    let mut last_state = None;
    while let Some(text) = next_text(&mut ws).await {
        if let ServerMessage::State(f) = parse(&text) {
            last_state = Some(f);
        }
    }
    let last_state = last_state.expect("at least one state frame before close");

    let report = tokio::time::timeout(Duration::from_secs(5), reports.recv()).await.unwrap().unwrap();
    let run = report.trace_dir.expect("trace persisted");
    assert!(run.starts_with(dir.path()));
    assert!(run.join("session.json").is_file());
    let csv = std::fs::File::open(run.join("traces/live.csv")).unwrap();
    let trace = SessionTrace::read_csv(csv).unwrap();
    trace.validate().unwrap();
    assert_eq!(trace.len(), report.ticks);
    let final_row = trace.rows.last().unwrap();
    assert!((final_row.t - last_state.t).abs() < 1e-9);
    let path = line_request().path.build().unwrap();
    let m = session_metrics(&trace, &path).unwrap();
    assert!(m.mean_pen_path < 2e-3, "{m:?}");
    assert!(run.join("metrics/live.json").is_file());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_input_gets_error_frames() {
    let (addr, _reports) = spawn(ServerConfig::default()).await;
    let mut ws = connect(addr).await;

    send(&mut ws, &pen(0.0, 30.0, 65.0)).await;
    assert_eq!(next_error(&mut ws).await, ErrorCode::NoSession);
    ws.send(Message::Text("{\"type\":\"stop\"}".into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadVersion);
    ws.send(Message::Text("hello".into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadMessage);
    ws.send(Message::Binary(vec![1u8, 2, 3].into())).await.unwrap();
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadMessage);

    let mut bad = line_request();
    bad.path = ShapeSpec::Circle {
        center_mm: [115.0, 65.0],
        radius_mm: 0.0,
    };
    send(&mut ws, &ClientMessage::Start(bad)).await;
    assert_eq!(next_error(&mut ws).await, ErrorCode::BadStart);

    send(&mut ws, &ClientMessage::Start(line_request())).await;
    send(&mut ws, &pen(0.0, 30.0, 65.0)).await;
    match parse(&next_text(&mut ws).await.unwrap()) {
        ServerMessage::State(_) => {}
        other => panic!("{other:?}"),
    }
    ws.send(Message::Text(r#"{"v":1,"type":"pen","t":0.1,"x_mm":1e400,"y_mm":1}"#.into()))
        .await
        .unwrap();
    assert!(matches!(next_error(&mut ws).await, ErrorCode::BadMessage | ErrorCode::BadSample));
    send(&mut ws, &ClientMessage::Stop).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn static_page_is_served() {
    let (addr, _reports) = spawn(ServerConfig::default()).await;
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("<html"));
}

#[test]
fn replay_is_deterministic() {
    let samples: Vec<PenSample> = (0..150)
        .map(|i| {
            let t = i as f64 * 0.013;
            PenSample {
                t,
                x_mm: 30.0 + 90.0 * t,
                y_mm: 65.0 + 3.0 * (7.0 * t).sin(),
            }
        })
        .collect();
    let mut req = line_request();
    req.assist = true;
    let settings = SessionSettings::default();
    let (a, ta) = replay(&req, &samples, &settings, 0.5).unwrap();
    let (b, tb) = replay(&req, &samples, &settings, 0.5).unwrap();
    assert_eq!(a, b);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    ta.write_csv(&mut ca).unwrap();
    tb.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    ta.validate().unwrap();
}
