use std::time::Duration;

use futures::SinkExt;
use magpen_core::shapes::ShapeSpec;
use magpen_core::sim::Strategy;
use magpen_service::protocol::{ClientMessage, PenSample, StartRequest};
use magpen_service::server::{router_with_reports, ServerConfig};
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

fn percentile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[((xs.len() - 1) as f64 * q).round() as usize]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn loop_keeps_period_while_reader_stalls() {
    let (tx, mut reports) = mpsc::unbounded_channel();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router_with_reports(ServerConfig::default(), Some(tx));
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.unwrap();
    let start = StartRequest {
        path: ShapeSpec::Circle {
            center_mm: [115.0, 65.0],
            radius_mm: 40.0,
        },
        strategy: Strategy::Mpcc,
        weights: None,
        assist: false,
    };
    ws.send(Message::Text(ClientMessage::Start(start).to_text().into())).await.unwrap();
    for i in 0..200 {
        let a = i as f64 * 0.01;
        let sample = ClientMessage::Pen(PenSample {
            t: a,
            x_mm: 115.0 + 40.0 * a.cos(),
            y_mm: 65.0 + 40.0 * a.sin(),
        });
        ws.send(Message::Text(sample.to_text().into())).await.unwrap();
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    ws.send(Message::Text(ClientMessage::Stop.to_text().into())).await.unwrap();

    let report = tokio::time::timeout(Duration::from_secs(10), reports.recv()).await.unwrap().unwrap();
    let dt = 0.01;
    assert!(report.intervals.len() > 150, "{} intervals", report.intervals.len());
    let jitter: Vec<f64> = report.intervals.iter().map(|i| (i - dt).abs()).collect();
    let p99 = percentile(jitter.clone(), 0.99);
    let mean = jitter.iter().sum::<f64>() / jitter.len() as f64;
    eprintln!("jitter mean {:.3} ms, p99 {:.3} ms, max {:.3} ms", mean * 1e3, p99 * 1e3, report.max_jitter(dt) * 1e3);
    assert!(p99 < 2e-3, "p99 jitter {p99}");
}
