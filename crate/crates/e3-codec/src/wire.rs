//! Byte-level grammar.
//!
//! ```text
//! frame                 := 0xE3 0x01 msg_type:u8 payload_len:u32 payload
//! 0x01 SetupRequest     := dapp_id:u32 services:u8
//! 0x02 SetupResponse    := dapp_id:u32 status:u8
//! 0x03 SubscriptionReq  := dapp_id:u32 service:u8 period_us:u32
//! 0x04 SubscriptionResp := sub_id:u32 status:u8
//! 0x05 Indication       := sub_id:u32 seq:u32 timestamp_us:u64 payload_kind:u8
//!                          (kind 1: n_samples:u32 (i:f32 q:f32)^n)
//! 0x06 Control          := dapp_id:u32 seq:u32 action:u8
//!                          (action 1: n_prb:u16 bitmap:ceil(n_prb/8) bytes)
//! 0x07 ErrorIndication  := code:u8
//! ```

use alloc::vec::Vec;

use crate::error::{DecodeError, EncodeError};
use crate::message::{
    ControlAction, E3Message, IndicationPayload, Iq, IqFrame, MsgType, PrbBlocklist, ServiceKind,
    ServiceSet, Status,
};

pub const MAGIC: u8 = 0xE3;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 7;
/// Upper bound on `payload_len`; anything larger is rejected before any
/// buffering happens.
pub const MAX_PAYLOAD: u32 = 1 << 24;

const PAYLOAD_KIND_IQ: u8 = 1;
const ACTION_BLOCKLIST: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: MsgType,
    pub payload_len: u32,
}

impl FrameHeader {
    /// Parses the 7-byte header at the start of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<Self, DecodeError> {
        // Report the first bad byte even if the header is incomplete.
        if let Some(&m) = bytes.first() {
            if m != MAGIC {
                return Err(DecodeError::BadMagic(m));
            }
        }
        if let Some(&v) = bytes.get(1) {
            if v != VERSION {
                return Err(DecodeError::UnsupportedVersion(v));
            }
        }
        if bytes.len() < HEADER_LEN {
            return Err(DecodeError::TruncatedHeader {
                available: bytes.len(),
            });
        }
        let msg_type = MsgType::try_from(bytes[2])?;
        let payload_len = u32::from_be_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]);
        if payload_len > MAX_PAYLOAD {
            return Err(DecodeError::PayloadTooLarge(payload_len));
        }
        Ok(Self {
            msg_type,
            payload_len,
        })
    }

    /// Total frame length, header included.
    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload_len as usize
    }
}

/// Encodes `msg` into a freshly allocated frame.
pub fn encode(msg: &E3Message) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len_hint(msg));
    encode_into(msg, &mut out)?;
    Ok(out)
}

/// Appends the encoded frame for `msg` to `out`. On error `out` is left as
/// it was.
pub fn encode_into(msg: &E3Message, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    let start = out.len();
    out.extend_from_slice(&[MAGIC, VERSION, msg.msg_type() as u8, 0, 0, 0, 0]);
    if let Err(e) = encode_payload(msg, out) {
        out.truncate(start);
        return Err(e);
    }
    let len = out.len() - start - HEADER_LEN;
    if len > MAX_PAYLOAD as usize {
        out.truncate(start);
        return Err(EncodeError::InvariantViolation("payload exceeds MAX_PAYLOAD"));
    }
    out[start + 3..start + HEADER_LEN].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(())
}

fn payload_len_hint(msg: &E3Message) -> usize {
    match msg {
        E3Message::Indication {
            payload: IndicationPayload::Iq(frame),
            ..
        } => 21 + 8 * frame.samples.len(),
        E3Message::Control {
            action: ControlAction::Blocklist(list),
            ..
        } => 11 + list.bitmap.len(),
        _ => 9,
    }
}

fn encode_payload(msg: &E3Message, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    match msg {
        E3Message::SetupRequest { dapp_id, services } => {
            out.extend_from_slice(&dapp_id.to_be_bytes());
            out.push(services.0);
        }
        E3Message::SetupResponse { dapp_id, status } => {
            out.extend_from_slice(&dapp_id.to_be_bytes());
            out.push(*status as u8);
        }
        E3Message::SubscriptionRequest {
            dapp_id,
            service,
            period_us,
        } => {
            out.extend_from_slice(&dapp_id.to_be_bytes());
            out.push(*service as u8);
            out.extend_from_slice(&period_us.to_be_bytes());
        }
        E3Message::SubscriptionResponse { sub_id, status } => {
            out.extend_from_slice(&sub_id.to_be_bytes());
            out.push(*status as u8);
        }
        E3Message::Indication {
            sub_id,
            seq,
            timestamp_us,
            payload,
        } => {
            out.extend_from_slice(&sub_id.to_be_bytes());
            out.extend_from_slice(&seq.to_be_bytes());
            out.extend_from_slice(&timestamp_us.to_be_bytes());
            match payload {
                IndicationPayload::Iq(frame) => {
                    let n = u32::try_from(frame.samples.len()).map_err(|_| {
                        EncodeError::InvariantViolation("sample count exceeds u32")
                    })?;
                    out.push(PAYLOAD_KIND_IQ);
                    out.extend_from_slice(&n.to_be_bytes());
                    out.reserve(8 * frame.samples.len());
                    for s in &frame.samples {
                        out.extend_from_slice(&s.i.to_be_bytes());
                        out.extend_from_slice(&s.q.to_be_bytes());
                    }
                }
            }
        }
        E3Message::Control {
            dapp_id,
            seq,
            action,
        } => {
            out.extend_from_slice(&dapp_id.to_be_bytes());
            out.extend_from_slice(&seq.to_be_bytes());
            match action {
                ControlAction::Blocklist(list) => {
                    list.validate()?;
                    out.push(ACTION_BLOCKLIST);
                    out.extend_from_slice(&list.n_prb.to_be_bytes());
                    out.extend_from_slice(&list.bitmap);
                }
            }
        }
        E3Message::ErrorIndication { code } => out.push(*code),
    }
    Ok(())
}

/// Decodes exactly one frame. `bytes` must hold the whole frame and nothing
/// else; extra bytes are reported as [`DecodeError::TrailingBytes`].
pub fn decode(bytes: &[u8]) -> Result<E3Message, DecodeError> {
    let header = FrameHeader::parse(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let declared = header.payload_len as usize;
    if body.len() < declared {
        return Err(DecodeError::TruncatedPayload {
            needed: declared,
            available: body.len(),
        });
    }
    if body.len() > declared {
        return Err(DecodeError::TrailingBytes(body.len() - declared));
    }
    decode_payload(header.msg_type, body)
}

/// Decodes a payload whose length is already known to be `payload.len()`.
pub(crate) fn decode_payload(msg_type: MsgType, payload: &[u8]) -> Result<E3Message, DecodeError> {
    let mut r = Reader::new(payload);
    let msg = match msg_type {
        MsgType::SetupRequest => E3Message::SetupRequest {
            dapp_id: r.u32()?,
            services: ServiceSet(r.u8()?),
        },
        MsgType::SetupResponse => E3Message::SetupResponse {
            dapp_id: r.u32()?,
            status: Status::try_from(r.u8()?)?,
        },
        MsgType::SubscriptionRequest => E3Message::SubscriptionRequest {
            dapp_id: r.u32()?,
            service: ServiceKind::try_from(r.u8()?)?,
            period_us: r.u32()?,
        },
        MsgType::SubscriptionResponse => E3Message::SubscriptionResponse {
            sub_id: r.u32()?,
            status: Status::try_from(r.u8()?)?,
        },
        MsgType::Indication => {
            let sub_id = r.u32()?;
            let seq = r.u32()?;
            let timestamp_us = r.u64()?;
            let payload = match r.u8()? {
                PAYLOAD_KIND_IQ => {
                    let n = r.u32()? as usize;
                    // Length check before allocating: `n` is attacker-controlled.
                    let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX))?;
                    let samples = raw
                        .chunks_exact(8)
                        .map(|c| {
                            Iq::new(
                                f32::from_be_bytes([c[0], c[1], c[2], c[3]]),
                                f32::from_be_bytes([c[4], c[5], c[6], c[7]]),
                            )
                        })
                        .collect();
                    IndicationPayload::Iq(IqFrame { samples })
                }
                other => {
                    return Err(DecodeError::InvalidField {
                        field: "payload_kind",
                        value: other.into(),
                    })
                }
            };
            E3Message::Indication {
                sub_id,
                seq,
                timestamp_us,
                payload,
            }
        }
        MsgType::Control => {
            let dapp_id = r.u32()?;
            let seq = r.u32()?;
            let action = match r.u8()? {
                ACTION_BLOCKLIST => {
                    let n_prb = r.u16()?;
                    let bitmap = r.take(PrbBlocklist::bitmap_len(n_prb))?.to_vec();
                    let list = PrbBlocklist { n_prb, bitmap };
                    if list.has_stray_bits() {
                        return Err(DecodeError::InvalidField {
                            field: "bitmap",
                            value: n_prb.into(),
                        });
                    }
                    ControlAction::Blocklist(list)
                }
                other => {
                    return Err(DecodeError::InvalidField {
                        field: "action",
                        value: other.into(),
                    })
                }
            };
            E3Message::Control {
                dapp_id,
                seq,
                action,
            }
        }
        MsgType::ErrorIndication => E3Message::ErrorIndication { code: r.u8()? },
    };
    r.finish()?;
    Ok(msg)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(DecodeError::TruncatedPayload {
                needed: self.pos.saturating_add(n),
                available: self.buf.len(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        self.array().map(u16::from_be_bytes)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_be_bytes)
    }

    fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(DecodeError::TrailingBytes(extra)),
        }
    }
}
