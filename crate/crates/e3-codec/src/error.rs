use thiserror::Error;

/// Failure to decode a frame. Every variant is distinct so callers can
/// report exactly what was wrong with the bytes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated header: {available} of 7 bytes")]
    TruncatedHeader { available: usize },
    #[error("bad magic byte {0:#04x}")]
    BadMagic(u8),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownMsgType(u8),
    #[error("payload length {0} exceeds the frame limit")]
    PayloadTooLarge(u32),
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid value {value} for field `{field}`")]
    InvalidField { field: &'static str, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("invariant violated: {0}")]
    InvariantViolation(&'static str),
}
