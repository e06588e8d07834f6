use std::fs;
use std::path::{Path, PathBuf};

use e3_net::Endpoint;
use serde::{Deserialize, Serialize};

use crate::HostError;

/// Instruction allowance per scheduler window, in fuel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GasBudget {
    Unlimited,
    PerWindow(u64),
}

impl GasBudget {
    /// `floor(pct / 100 * capacity)`.
    pub fn percent_of(pct: f64, capacity: u64) -> Self {
        Self::PerWindow((pct / 100.0 * capacity as f64).floor() as u64)
    }

    pub fn limit(self) -> Option<u64> {
        match self {
            Self::Unlimited => None,
            Self::PerWindow(n) => Some(n),
        }
    }
}

/// Budget as written in a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BudgetSpec {
    Fixed {
        instructions_per_window: u64,
        #[serde(default = "default_window_us")]
        window_us: u64,
    },
    Percent {
        percent: f64,
    },
    Unlimited(UnlimitedTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlimitedTag {
    Unlimited,
}

fn default_window_us() -> u64 {
    crate::DEFAULT_WINDOW_US
}

impl BudgetSpec {
    pub const UNLIMITED: BudgetSpec = BudgetSpec::Unlimited(UnlimitedTag::Unlimited);

    /// Turns the manifest budget into an absolute one for a host with the
    /// given window length and (optional) calibrated capacity.
    pub fn resolve(&self, host_window_us: u64, capacity: Option<u64>) -> Result<GasBudget, HostError> {
        match *self {
            Self::Unlimited(_) => Ok(GasBudget::Unlimited),
            Self::Fixed {
                instructions_per_window,
                window_us,
            } => {
                if window_us != host_window_us {
                    return Err(HostError::WindowMismatch {
                        manifest_us: window_us,
                        host_us: host_window_us,
                    });
                }
                Ok(GasBudget::PerWindow(instructions_per_window))
            }
            Self::Percent { percent } => {
                if !(percent >= 0.0 && percent <= 100.0) {
                    return Err(HostError::Manifest(format!("percent {percent} outside [0, 100]")));
                }
                let cap = capacity.ok_or(HostError::CalibrationMissing)?;
                Ok(GasBudget::percent_of(percent, cap))
            }
        }
    }
}

/// Deployment unit: which bytecode to run and what it may touch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub bytecode_path: PathBuf,
    #[serde(default)]
    pub allowed_endpoints: Vec<Endpoint>,
    pub budget: BudgetSpec,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, HostError> {
        let m: Self = serde_json::from_str(text).map_err(|e| HostError::Manifest(e.to_string()))?;
        if m.name.is_empty() {
            return Err(HostError::Manifest("empty name".into()));
        }
        if let BudgetSpec::Fixed { window_us: 0, .. } = m.budget {
            return Err(HostError::Manifest("window_us must be positive".into()));
        }
        Ok(m)
    }

    /// Loads a manifest file. A relative `bytecode_path` is taken relative to
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, HostError> {
        let mut m = Self::from_json(&fs::read_to_string(path)?)?;
        if m.bytecode_path.is_relative() {
            if let Some(dir) = path.parent() {
                m.bytecode_path = dir.join(&m.bytecode_path);
            }
        }
        Ok(m)
    }

    pub fn read_bytecode(&self) -> Result<Vec<u8>, HostError> {
        Ok(fs::read(&self.bytecode_path)?)
    }
}
