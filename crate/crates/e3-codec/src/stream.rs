use alloc::vec::Vec;

use crate::error::DecodeError;
use crate::message::E3Message;
use crate::wire::{decode_payload, FrameHeader, HEADER_LEN};

/// Reassembles frames from a byte stream that may deliver them in arbitrary
/// pieces.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
    start: usize,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            buf: Vec::with_capacity(cap),
            start: 0,
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed as frames.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    /// True if [`FrameBuffer::next_raw`] would return something: a complete
    /// frame or a header error.
    pub fn has_frame(&self) -> bool {
        let avail = &self.buf[self.start..];
        match FrameHeader::parse(avail) {
            Ok(h) => avail.len() >= h.frame_len(),
            Err(DecodeError::TruncatedHeader { .. }) => false,
            Err(_) => true,
        }
    }

    /// Returns the next complete frame (header included) without decoding
    /// the payload. A header error poisons the stream: frame boundaries are
    /// lost and the connection should be dropped.
    pub fn next_raw(&mut self) -> Option<Result<&[u8], DecodeError>> {
        let avail = &self.buf[self.start..];
        let header = match FrameHeader::parse(avail) {
            Ok(h) => h,
            Err(DecodeError::TruncatedHeader { .. }) => return None,
            Err(e) => return Some(Err(e)),
        };
        let len = header.frame_len();
        if avail.len() < len {
            return None;
        }
        let begin = self.start;
        self.start += len;
        Some(Ok(&self.buf[begin..begin + len]))
    }

    /// Decodes the next complete frame, if one is buffered.
    pub fn next_message(&mut self) -> Option<Result<E3Message, DecodeError>> {
        match self.next_raw()? {
            Ok(frame) => {
                let header = FrameHeader::parse(frame).expect("validated by next_raw");
                Some(decode_payload(header.msg_type, &frame[HEADER_LEN..]))
            }
            Err(e) => Some(Err(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::{ServiceSet, Status};
    use crate::wire::encode;

    #[test]
    fn reassembles_byte_by_byte() {
        let a = E3Message::SetupRequest {
            dapp_id: 3,
            services: ServiceSet(1),
        };
        let b = E3Message::SubscriptionResponse {
            sub_id: 1,
            status: Status::Ok,
        };
        let mut bytes = encode(&a).unwrap();
        bytes.extend(encode(&b).unwrap());

        let mut fb = FrameBuffer::new();
        let mut out = Vec::new();
        for byte in bytes {
            fb.push(&[byte]);
            while let Some(m) = fb.next_message() {
                out.push(m.unwrap());
            }
        }
        assert_eq!(out, [a, b]);
        assert_eq!(fb.pending(), 0);
    }

    #[test]
    fn bad_magic_poisons() {
        let mut fb = FrameBuffer::new();
        fb.push(&[0x00, 0x01]);
        assert_eq!(fb.next_message(), Some(Err(DecodeError::BadMagic(0))));
    }
}
