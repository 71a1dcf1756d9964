//! Wire format of `/session`: JSON text frames, millimeters, `"v": 1` in
//! every frame.

use magpen_core::mpcc::CostWeights;
use magpen_core::shapes::ShapeSpec;
use magpen_core::sim::Strategy;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRequest {
    pub path: ShapeSpec,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<CostWeights>,
    #[serde(default)]
    pub assist: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenSample {
    /// Client timestamp (s).
    pub t: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start(StartRequest),
    Pen(PenSample),
    Stop,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateFrame {
    /// Session time (s), starting at the first pen sample.
    pub t: f64,
    pub magnet_mm: [f64; 2],
    pub alpha: f64,
    /// Progress along the path (mm of arc length).
    pub theta: f64,
    pub s_theta_mm: [f64; 2],
    pub force_mN: [f64; 2],
    /// Pen position the controller acted on: the assisted pen when assist
    /// is on, the clamped raw pen otherwise.
    pub assisted_pen_mm: [f64; 2],
    pub cost: f64,
    /// No pen sample for more than the pause timeout.
    pub paused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorFrame {
    pub code: ErrorCode,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not JSON, or not a known message.
    BadMessage,
    /// `v` missing or not 1.
    BadVersion,
    /// Start request with an unusable path, strategy or weights.
    BadStart,
    /// Pen sample or stop before any start.
    NoSession,
    /// Pen sample with non-finite values.
    BadSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateFrame),
    Error(ErrorFrame),
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    v: u32,
    #[serde(flatten)]
    body: T,
}

fn encode<T: Serialize>(body: &T) -> String {
    serde_json::to_string(&Envelope {
        v: PROTOCOL_VERSION,
        body,
    })
    .expect("protocol messages serialize")
}

impl ServerMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error(ErrorFrame {
            code,
            detail: detail.into(),
        })
    }

    pub fn to_text(&self) -> String {
        encode(self)
    }

    pub fn from_text(text: &str) -> Result<Self, ServerMessage> {
        decode(text)
    }
}

impl ClientMessage {
    pub fn to_text(&self) -> String {
        encode(self)
    }

    /// Parses a frame, or returns the error frame to send back.
    pub fn from_text(text: &str) -> Result<Self, ServerMessage> {
        decode(text)
    }
}

fn decode<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ServerMessage> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ServerMessage::error(ErrorCode::BadMessage, "frame must be a JSON object"))?;
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(PROTOCOL_VERSION as u64) => {}
        Some(v) => {
            return Err(ServerMessage::error(
                ErrorCode::BadVersion,
                format!("unsupported protocol version {v}, expected {PROTOCOL_VERSION}"),
            ))
        }
        None => return Err(ServerMessage::error(ErrorCode::BadVersion, "missing field `v`")),
    }
    serde_json::from_value(value).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_carry_version() {
        let m = ClientMessage::Pen(PenSample {
            t: 0.5,
            x_mm: 10.0,
            y_mm: 20.0,
        });
        let text = m.to_text();
        assert_eq!(text, r#"{"v":1,"type":"pen","t":0.5,"x_mm":10.0,"y_mm":20.0}"#);
        assert_eq!(ClientMessage::from_text(&text).unwrap(), m);
        assert_eq!(ClientMessage::Stop.to_text(), r#"{"v":1,"type":"stop"}"#);
        let e = ServerMessage::error(ErrorCode::NoSession, "x").to_text();
        assert_eq!(e, r#"{"v":1,"type":"error","code":"no_session","detail":"x"}"#);
    }

    #[test]
    fn start_round_trip() {
        let text = r#"{"v":1,"type":"start","path":{"shape":"circle","center_mm":[115,65],"radius_mm":40},"strategy":"mpcc","assist":true}"#;
        match ClientMessage::from_text(text).unwrap() {
            ClientMessage::Start(s) => {
                assert!(s.assist);
                assert_eq!(s.strategy, Strategy::Mpcc);
                assert!(s.weights.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_frames() {
        let code = |t: &str| match ClientMessage::from_text(t) {
            Err(ServerMessage::Error(e)) => e.code,
            other => panic!("{other:?}"),
        };
        assert_eq!(code("not json"), ErrorCode::BadMessage);
        assert_eq!(code("[1]"), ErrorCode::BadMessage);
        assert_eq!(code(r#"{"type":"stop"}"#), ErrorCode::BadVersion);
        assert_eq!(code(r#"{"v":2,"type":"stop"}"#), ErrorCode::BadVersion);
        assert_eq!(code(r#"{"v":1,"type":"jump"}"#), ErrorCode::BadMessage);
        assert_eq!(code(r#"{"v":1,"type":"pen","t":0}"#), ErrorCode::BadMessage);
    }
}
