//! Coordination between the coarse engine and fine-grained instances.

mod launcher;
mod message;
mod session;
mod transport;

use std::io;

use thiserror::Error;

pub use launcher::{
    listen_and_serve, own_peak_rss, peak_rss_of, L1Launcher, L1Link, DEFAULT_TIMEOUT,
};
pub use message::{
    decode, encode, wire_round, CoordMessage, Counters, EntityRecord, ErrorCode, FinalPayload,
    InitPayload, StepPayload, PROTOCOL_VERSION,
};
pub use session::{serve, session_run, L1Session, Lockstep, SessionOutcome, SessionState, Side};
pub use transport::{loopback, render_transcript, Channel, Direction, TranscriptEntry};

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("i/o: {0}")]
    Io(#[source] io::Error),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("peer closed the connection")]
    Closed,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("{got} from {from:?} not allowed in state {state:?}")]
    ProtocolViolation {
        state: SessionState,
        from: Side,
        got: &'static str,
    },
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    VersionMismatch { ours: u32, theirs: u32 },
    #[error("peer reported {code:?}: {detail}")]
    Remote { code: ErrorCode, detail: String },
    #[error("level 1: {0}")]
    Level1(String),
    #[error("could not start level-1 server: {0}")]
    Launch(String),
}

impl CoordError {
    pub(crate) fn from_io(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => CoordError::Timeout,
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::BrokenPipe
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted => CoordError::Closed,
            _ => CoordError::Io(e),
        }
    }
}
