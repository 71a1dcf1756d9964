//! Live guidance sessions over WebSocket.
//!
//! Clients connect to `/session`, send a `start` frame with the path and
//! strategy, then stream `pen` samples. The server runs the control loop at
//! the control period on its own thread and streams `state` frames back,
//! dropping stale frames when the client reads slowly.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ErrorCode, PenSample, ServerMessage, StartRequest, StateFrame};
pub use server::{router, serve, serve_on, ServerConfig};
pub use session::{replay, Session, SessionSettings};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/sessions.md")]
struct Guide;
