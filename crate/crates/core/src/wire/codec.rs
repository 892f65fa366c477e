//! Length-prefixed frame encoding and incremental decoding.

use super::{Message, WireError};
use crate::events::{canonical_json, Event, FeedbackCommand};

/// Default cap on the length field (tag + payload): 64 KiB.
pub const DEFAULT_MAX_FRAME_LEN: usize = 64 * 1024;

const HEADER_LEN: usize = 4;

/// Result of one decode attempt over a byte buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome {
    /// A complete frame was parsed; `consumed` bytes belong to it.
    Frame { message: Message, consumed: usize },
    /// The buffer holds only part of a frame; feed more bytes and retry.
    NeedMoreData,
}

/// Stateless encoder/decoder with a configurable frame-size bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameCodec {
    pub max_frame_len: usize,
}

impl Default for FrameCodec {
    fn default() -> Self {
        Self { max_frame_len: DEFAULT_MAX_FRAME_LEN }
    }
}

impl FrameCodec {
    pub fn new(max_frame_len: usize) -> Self {
        Self { max_frame_len }
    }

    /// Serializes one message: 4-byte big-endian length, 1-byte tag, payload.
    pub fn encode(&self, msg: &Message) -> Result<Vec<u8>, WireError> {
        let payload = match msg {
            Message::StreamData(event) => canonical_json(event).map_err(|e| {
                WireError::MalformedPayload { kind: "STREAM-DATA", detail: e.to_string() }
            })?,
            Message::Feedback(cmd) => canonical_json(cmd).map_err(|e| {
                WireError::MalformedPayload { kind: "FEEDBACK", detail: e.to_string() }
            })?,
            _ => Vec::new(),
        };
        let len = 1 + payload.len();
        if len > self.max_frame_len {
            return Err(WireError::OversizeFrame { len, max: self.max_frame_len });
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + len);
        buf.extend_from_slice(&(len as u32).to_be_bytes());
        buf.push(msg.tag());
        buf.extend_from_slice(&payload);
        Ok(buf)
    }

    /// Attempts to parse exactly one frame from the front of `buf`.
    ///
    /// A short buffer is not an error: the caller buffers more bytes and
    /// retries. Unknown tags, oversize lengths, and payloads that do not
    /// match the tag's schema are errors.
    pub fn decode(&self, buf: &[u8]) -> Result<DecodeOutcome, WireError> {
        if buf.len() < HEADER_LEN {
            return Ok(DecodeOutcome::NeedMoreData);
        }
        let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
        if len > self.max_frame_len {
            return Err(WireError::OversizeFrame { len, max: self.max_frame_len });
        }
        if len == 0 {
            // A frame must at least carry its tag byte.
            return Err(WireError::MalformedPayload {
                kind: "frame",
                detail: "zero-length frame".into(),
            });
        }
        if buf.len() < HEADER_LEN + len {
            return Ok(DecodeOutcome::NeedMoreData);
        }
        let tag = buf[HEADER_LEN];
        let payload = &buf[HEADER_LEN + 1..HEADER_LEN + len];
        let message = match tag {
            0x01 => Self::empty(Message::Syn, payload)?,
            0x02 => Self::empty(Message::SynAck, payload)?,
            0x03 => Self::empty(Message::Ack, payload)?,
            0x04 => Self::empty(Message::Notf, payload)?,
            0x05 => {
                let event: Event = serde_json::from_slice(payload).map_err(|e| {
                    WireError::MalformedPayload { kind: "STREAM-DATA", detail: e.to_string() }
                })?;
                Message::StreamData(event)
            }
            0x06 => Self::empty(Message::Awake, payload)?,
            0x07 => {
                let cmd: FeedbackCommand = serde_json::from_slice(payload).map_err(|e| {
                    WireError::MalformedPayload { kind: "FEEDBACK", detail: e.to_string() }
                })?;
                Message::Feedback(cmd)
            }
            0x08 => Self::empty(Message::Fin, payload)?,
            other => return Err(WireError::UnknownTag(other)),
        };
        Ok(DecodeOutcome::Frame { message, consumed: HEADER_LEN + len })
    }

    fn empty(msg: Message, payload: &[u8]) -> Result<Message, WireError> {
        if payload.is_empty() {
            Ok(msg)
        } else {
            Err(WireError::MalformedPayload {
                kind: msg.kind_name(),
                detail: format!("{} unexpected payload bytes", payload.len()),
            })
        }
    }
}
