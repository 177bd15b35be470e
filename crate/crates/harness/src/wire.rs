//! Telemetry/teleoperation wire protocol.
//!
//! Each frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The JSON object carries a per-sender monotone `seq` and a
//! `type` tag:
//!
//! ```text
//! {"seq":12,"type":"action_command","action":[0.1,0.0,0.0,0.0],"source":"pad","t":3.2}
//! ```

use std::io::{self, Read, Write};

use absdl_core::safety::{OverrideCommand, Verdict};
use absdl_core::sim::{Action, Observation, WorldState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireError {
    /// Whether the stream can continue past this error (the frame boundary
    /// is still known).
    pub fn is_recoverable(&self) -> bool {
        matches!(self, WireError::Malformed(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Sends actions; at most one per service.
    Controller,
    /// Receives state and may send overrides and recording controls.
    Observer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordAction {
    Start,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// First message of a client session.
    Hello { role: Role, token: Option<String> },
    StateUpdate {
        t: f64,
        world: WorldState,
        observation: Observation,
        verdict: Verdict,
        recording: bool,
    },
    ActionCommand { action: Action, source: String, t: f64 },
    Override { command: OverrideCommand },
    RecordControl { action: RecordAction, tag: u32 },
    /// Positive reply to the client message with sequence number `re`.
    Ack { re: u64, detail: String },
    /// Negative reply; `re` is absent when the offending frame was unreadable.
    Error { re: Option<u64>, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    #[serde(flatten)]
    pub msg: WireMessage,
}

impl Envelope {
    pub fn new(seq: u64, msg: WireMessage) -> Self {
        Self { seq, msg }
    }
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let body = serde_json::to_vec(env).expect("wire messages serialize");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_body(body: &[u8]) -> Result<Envelope, WireError> {
    serde_json::from_slice(body).map_err(|e| WireError::Malformed(e.to_string()))
}

/// Decode the first frame in `buf`.
///
/// Returns `Ok(None)` when more bytes are needed, otherwise the decoded frame
/// (or the decoding error) and the number of bytes it occupied, so a caller
/// can skip a malformed body and continue.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Result<Envelope, WireError>, usize)>, WireError> {
    let Some(header) = buf.get(..4) else { return Ok(None) };
    let len = u32::from_be_bytes(header.try_into().expect("four bytes")) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let Some(body) = buf.get(4..4 + len) else { return Ok(None) };
    Ok(Some((decode_body(body), 4 + len)))
}

pub fn write_frame<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    w.write_all(&encode_frame(env))?;
    w.flush()
}

/// Read one frame body. A malformed body is reported as
/// [`WireError::Malformed`] after it has been fully consumed.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Envelope, WireError> {
    let mut header = [0u8; 4];
    r.read_exact(&mut header)?;
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    decode_body(&body)
}
