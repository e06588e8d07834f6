//! Experiment harness: wires the agent, the sandbox host and both builds of
//! the sensing dApp into the isolation, latency and footprint runs.

pub mod footprint;
pub mod guest;
pub mod isolation;
pub mod latency;
pub mod report;
pub mod session;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use footprint::{run_footprint, FootprintRecord};
pub use guest::{DAPP_WASM, LOAD_WAT};
pub use isolation::{run_isolation, IsolationRun, IsolationScenario, IsolationVerdict, ShareRow};
pub use latency::{run_latency, LatencyOptions, LatencyRun, Percentiles, StageRow};
pub use session::{run_session, Companion, DappEnd, SessionOptions, SessionRun};

/// Which build of the dApp runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchArm {
    /// Compiled natively and run in-process.
    Native,
    /// Compiled to wasm32 and run inside the metered host.
    #[serde(alias = "sandboxed")]
    Sandbox,
}

impl BenchArm {
    pub const ALL: [BenchArm; 2] = [BenchArm::Native, BenchArm::Sandbox];

    pub fn name(self) -> &'static str {
        match self {
            Self::Native => "native",
            Self::Sandbox => "sandbox",
        }
    }
}

impl fmt::Display for BenchArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchArm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "native" => Ok(Self::Native),
            "sandbox" | "sandboxed" => Ok(Self::Sandbox),
            other => Err(BenchError::Usage(format!("unknown arm `{other}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("capacity has not been calibrated")]
    CalibrationMissing,
    #[error("{arm}: only {got} of {want} loops answered")]
    InsufficientLoops { arm: BenchArm, got: usize, want: usize },
    #[error("peak RSS is not available on this platform")]
    UnsupportedPlatform,
    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{arm} dApp did not finish cleanly: {end}")]
    DappFailed { arm: BenchArm, end: DappEnd },
    #[error("malformed {file} line {line}: {reason}")]
    Csv { file: String, line: usize, reason: String },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Host(#[from] wasm_host::HostError),
    #[error(transparent)]
    Agent(#[from] e3_agent::AgentError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seed override from `BENCH_SEED`, if set and numeric.
pub fn seed_override() -> Option<u64> {
    std::env::var("BENCH_SEED").ok()?.trim().parse().ok()
}
