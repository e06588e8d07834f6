//! Reference spectrum-sensing dApp.
//!
//! Receives I/Q report indications from an E3 agent, estimates per-PRB
//! energy with a radix-2 FFT, flags PRBs that stand out from the median
//! noise floor, and answers each indication with a PRB blocklist control.
//!
//! The crate is `no_std` + `alloc` and talks to the outside world only
//! through the [`Net`] trait, so the same source runs natively and inside
//! the bytecode sandbox. The `native` feature adds [`NativeNet`], a std
//! backend over `e3-net`. All math is `f64` with `libm` transcendental
//! functions, which keeps both builds bit-identical.

#![no_std]

extern crate alloc;

pub mod config;
pub mod dapp;
pub mod fft;
pub mod net;
pub mod sensing;

#[cfg(feature = "native")]
pub mod native;

pub use config::SensingConfig;
pub use dapp::{run_dapp, DappOutcome, ExitCode, StageRecord};
pub use fft::{fft, Complex, Fft};
pub use net::{Errno, Fd, Net};
#[cfg(feature = "native")]
pub use native::NativeNet;
pub use sensing::{sense, PrbEnergyMap, Sensor, RESOLUTION_DB};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SenseError {
    #[error("transform size {0} is not a power of two")]
    NonPowerOfTwo(usize),
    #[error("buffer length {got} does not match plan size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frame has {got} samples, expected {expected}")]
    SampleCountMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}
