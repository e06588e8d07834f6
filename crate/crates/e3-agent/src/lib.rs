//! Simulated RAN-side E3 agent.
//!
//! Accepts dApp setups and report subscriptions, streams synthetic I/Q
//! frames at the subscribed period, applies PRB blocklist controls to a
//! simulated scheduler and records the round trip of every answered
//! indication on a single monotonic clock.
//!
//! ```no_run
//! use e3_agent::{spawn, ScenarioConfig, ServeOptions};
//! use e3_net::Network;
//!
//! let net = Network::loopback_tcp();
//! let agent = spawn(&net, "127.0.0.1", 0, ScenarioConfig::default(), ServeOptions::default())?;
//! println!("agent at {}", agent.endpoint());
//! let report = agent.join()?;
//! println!("{} loops", report.records.len());
//! # Ok::<(), e3_agent::AgentError>(())
//! ```

mod agent;
mod error;
pub mod records;
pub mod scenario;
mod scheduler;
mod server;

pub use agent::{Agent, ConnId, ErrorCode, Subscription};
pub use error::AgentError;
pub use records::{read_loop_csv, write_loop_csv, LoopLog, LoopRecord};
pub use scenario::{frame_at, frame_rng, gen_iq_frame, sigma_for_snr, Incumbent, ScenarioConfig};
pub use scheduler::SchedulerState;
pub use server::{serve, spawn, AgentHandle, AgentReport, ControlFrame, ServeOptions};
