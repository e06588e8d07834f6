use std::io;

use thiserror::Error;

use crate::InstanceId;

#[derive(Debug, Error)]
pub enum HostError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("invalid bytecode: {0}")]
    InvalidBytecode(String),
    #[error("forbidden import {module}.{name}")]
    ForbiddenImport { module: String, name: String },
    #[error("module entry point unusable: {0}")]
    BadEntry(String),
    #[error("instance limit of {limit} reached")]
    ResourceExhausted { limit: usize },
    #[error("an instance named {0:?} already exists")]
    DuplicateName(String),
    #[error("no instance {0}")]
    UnknownInstance(InstanceId),
    #[error("no usage recorded for instance {instance} in window {window}")]
    UnknownWindow { instance: InstanceId, window: u64 },
    #[error("calibration needs a non-zero duration")]
    CalibrationTooShort,
    #[error("percentage budget requires a calibrated capacity")]
    CalibrationMissing,
    #[error("manifest budget window of {manifest_us} us differs from host window of {host_us} us")]
    WindowMismatch { manifest_us: u64, host_us: u64 },
    #[error("engine error: {0}")]
    Engine(String),
}

impl From<wasmi::Error> for HostError {
    fn from(e: wasmi::Error) -> Self {
        Self::Engine(e.to_string())
    }
}
