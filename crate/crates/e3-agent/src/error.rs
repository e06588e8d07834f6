use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("control carries {got} PRBs, scenario has {expected}")]
    MismatchedPrbCount { expected: u16, got: u16 },
    #[error("malformed loop log line {line}: {reason}")]
    LoopLog { line: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}
