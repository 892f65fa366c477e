//! Framed message format and session state machines for the twin data link.
//!
//! Wire layout (all multi-byte integers big-endian):
//!
//! ```text
//! +-------------+-----+------------------+
//! | length: u32 | tag |     payload      |
//! +-------------+-----+------------------+
//! ```
//!
//! `length` counts the tag byte plus the payload. Stream data and feedback
//! frames carry the canonical JSON of the record; every other kind has an
//! empty payload. The session machines are pure transition functions over
//! an already-open byte stream; callers own all I/O.

mod codec;
mod session;

pub use codec::{DecodeOutcome, FrameCodec, DEFAULT_MAX_FRAME_LEN};
pub use session::{
    ClientInput, ClientSession, ClientStep, Phase, ServerInput, ServerSession, ServerStep,
};

use crate::events::{Event, FeedbackCommand};

/// Everything that can travel over the link.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Syn,
    SynAck,
    Ack,
    Notf,
    StreamData(Event),
    Awake,
    Feedback(FeedbackCommand),
    Fin,
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Syn => 0x01,
            Message::SynAck => 0x02,
            Message::Ack => 0x03,
            Message::Notf => 0x04,
            Message::StreamData(_) => 0x05,
            Message::Awake => 0x06,
            Message::Feedback(_) => 0x07,
            Message::Fin => 0x08,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Message::Syn => "SYN",
            Message::SynAck => "SYN-ACK",
            Message::Ack => "ACK",
            Message::Notf => "NOTF",
            Message::StreamData(_) => "STREAM-DATA",
            Message::Awake => "AWAKE",
            Message::Feedback(_) => "FEEDBACK",
            Message::Fin => "FIN",
        }
    }
}

/// Errors raised by framing and the session machines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("frame of {len} bytes exceeds the {max}-byte limit")]
    OversizeFrame { len: usize, max: usize },
    #[error("unknown frame tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("malformed payload for {kind}: {detail}")]
    MalformedPayload { kind: &'static str, detail: String },
    #[error("protocol violation: {input} not accepted in phase {phase:?}")]
    ProtocolViolation { phase: Phase, input: String },
}
