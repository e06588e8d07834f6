use alloc::vec;
use alloc::vec::Vec;

use crate::error::{DecodeError, EncodeError};

/// RIC service primitive a subscription or registration refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ServiceKind {
    Report = 1,
    Insert = 2,
    Control = 3,
    Policy = 4,
    Query = 5,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Report,
        ServiceKind::Insert,
        ServiceKind::Control,
        ServiceKind::Policy,
        ServiceKind::Query,
    ];

    /// Bit this service occupies in a [`ServiceSet`].
    pub const fn bit(self) -> u8 {
        1 << (self as u8 - 1)
    }
}

impl TryFrom<u8> for ServiceKind {
    type Error = DecodeError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Ok(match v {
            1 => Self::Report,
            2 => Self::Insert,
            3 => Self::Control,
            4 => Self::Policy,
            5 => Self::Query,
            _ => {
                return Err(DecodeError::InvalidField {
                    field: "service",
                    value: v.into(),
                })
            }
        })
    }
}

/// Bitmask of services a dApp declares at setup (bit `k-1` for service `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ServiceSet(pub u8);

impl ServiceSet {
    pub fn of(kinds: &[ServiceKind]) -> Self {
        Self(kinds.iter().fold(0, |acc, k| acc | k.bit()))
    }

    pub fn contains(self, kind: ServiceKind) -> bool {
        self.0 & kind.bit() != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Rejected = 1,
}

impl TryFrom<u8> for Status {
    type Error = DecodeError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Self::Ok),
            1 => Ok(Self::Rejected),
            _ => Err(DecodeError::InvalidField {
                field: "status",
                value: v.into(),
            }),
        }
    }
}

/// One complex baseband sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Iq {
    pub i: f32,
    pub q: f32,
}

impl Iq {
    pub const fn new(i: f32, q: f32) -> Self {
        Self { i, q }
    }
}

/// A vector of I/Q samples carried in a report indication.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IqFrame {
    pub samples: Vec<Iq>,
}

impl IqFrame {
    pub fn new(samples: Vec<Iq>) -> Self {
        Self { samples }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            samples: vec![Iq::default(); n],
        }
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }
}

/// Bitmap over physical resource blocks. Bit `i` (LSB-first within each
/// byte) set means PRB `i` must not be scheduled.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PrbBlocklist {
    pub n_prb: u16,
    pub bitmap: Vec<u8>,
}

impl PrbBlocklist {
    /// All PRBs free.
    pub fn new(n_prb: u16) -> Self {
        Self {
            n_prb,
            bitmap: vec![0; Self::bitmap_len(n_prb)],
        }
    }

    pub const fn bitmap_len(n_prb: u16) -> usize {
        (n_prb as usize).div_ceil(8)
    }

    /// Builds a blocklist from PRB indices. Returns `None` if any index is
    /// out of range.
    pub fn from_indices<I: IntoIterator<Item = u16>>(n_prb: u16, indices: I) -> Option<Self> {
        let mut list = Self::new(n_prb);
        for i in indices {
            if i >= n_prb {
                return None;
            }
            list.block(i);
        }
        Some(list)
    }

    /// Marks `prb` blocked. Panics if `prb >= n_prb`.
    pub fn block(&mut self, prb: u16) {
        assert!(prb < self.n_prb, "PRB {prb} out of range {}", self.n_prb);
        self.bitmap[prb as usize / 8] |= 1 << (prb % 8);
    }

    pub fn is_blocked(&self, prb: u16) -> bool {
        prb < self.n_prb
            && self
                .bitmap
                .get(prb as usize / 8)
                .is_some_and(|b| b & (1 << (prb % 8)) != 0)
    }

    /// Blocked PRB indices in ascending order.
    pub fn blocked(&self) -> impl Iterator<Item = u16> + '_ {
        (0..self.n_prb).filter(|&p| self.is_blocked(p))
    }

    pub fn count(&self) -> usize {
        self.bitmap.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Checks the length and padding-bit invariants.
    pub fn validate(&self) -> Result<(), EncodeError> {
        if self.bitmap.len() != Self::bitmap_len(self.n_prb) {
            return Err(EncodeError::InvariantViolation(
                "blocklist bitmap length must be ceil(n_prb / 8)",
            ));
        }
        if self.has_stray_bits() {
            return Err(EncodeError::InvariantViolation(
                "blocklist bits at index >= n_prb must be zero",
            ));
        }
        Ok(())
    }

    pub(crate) fn has_stray_bits(&self) -> bool {
        let used = self.n_prb % 8;
        used != 0 && self.bitmap.last().is_some_and(|last| last >> used != 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IndicationPayload {
    /// payload_kind 1
    Iq(IqFrame),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlAction {
    /// action 1
    Blocklist(PrbBlocklist),
}

/// Every message that crosses the dApp/agent boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum E3Message {
    SetupRequest {
        dapp_id: u32,
        services: ServiceSet,
    },
    SetupResponse {
        dapp_id: u32,
        status: Status,
    },
    SubscriptionRequest {
        dapp_id: u32,
        service: ServiceKind,
        period_us: u32,
    },
    SubscriptionResponse {
        sub_id: u32,
        status: Status,
    },
    Indication {
        sub_id: u32,
        seq: u32,
        timestamp_us: u64,
        payload: IndicationPayload,
    },
    /// `seq` echoes the indication this control answers.
    Control {
        dapp_id: u32,
        seq: u32,
        action: ControlAction,
    },
    ErrorIndication {
        code: u8,
    },
}

/// Frame `msg_type` discriminant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    SetupRequest = 0x01,
    SetupResponse = 0x02,
    SubscriptionRequest = 0x03,
    SubscriptionResponse = 0x04,
    Indication = 0x05,
    Control = 0x06,
    ErrorIndication = 0x07,
}

impl TryFrom<u8> for MsgType {
    type Error = DecodeError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Ok(match v {
            0x01 => Self::SetupRequest,
            0x02 => Self::SetupResponse,
            0x03 => Self::SubscriptionRequest,
            0x04 => Self::SubscriptionResponse,
            0x05 => Self::Indication,
            0x06 => Self::Control,
            0x07 => Self::ErrorIndication,
            other => return Err(DecodeError::UnknownMsgType(other)),
        })
    }
}

impl E3Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Self::SetupRequest { .. } => MsgType::SetupRequest,
            Self::SetupResponse { .. } => MsgType::SetupResponse,
            Self::SubscriptionRequest { .. } => MsgType::SubscriptionRequest,
            Self::SubscriptionResponse { .. } => MsgType::SubscriptionResponse,
            Self::Indication { .. } => MsgType::Indication,
            Self::Control { .. } => MsgType::Control,
            Self::ErrorIndication { .. } => MsgType::ErrorIndication,
        }
    }
}
