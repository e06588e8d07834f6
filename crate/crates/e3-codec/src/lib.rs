//! E3-lite: the message model spoken between dApps and the RAN-side E3 agent,
//! and its fixed-layout binary wire format.
//!
//! Every frame starts with a 7-byte header:
//!
//! ```text
//! +------+---------+----------+----------------------+
//! | 0xE3 | version | msg_type | payload_len (u32 BE) |
//! +------+---------+----------+----------------------+
//! ```
//!
//! followed by exactly `payload_len` bytes laid out per message type (see
//! [`wire`]). All integers are big-endian and `f32` samples are IEEE-754
//! big-endian. Encoding is deterministic: equal messages always produce
//! identical bytes.
//!
//! The crate is `no_std` (with `alloc`) so the same codec is compiled into
//! sandboxed guests and native binaries alike.

#![no_std]

extern crate alloc;

mod error;
mod message;
mod stream;
pub mod wire;

pub use error::{DecodeError, EncodeError};
pub use message::{
    ControlAction, E3Message, IndicationPayload, Iq, IqFrame, MsgType, PrbBlocklist, ServiceKind,
    ServiceSet, Status,
};
pub use stream::FrameBuffer;
pub use wire::{decode, encode, encode_into, FrameHeader, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION};
