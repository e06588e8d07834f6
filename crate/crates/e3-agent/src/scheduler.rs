use e3_codec::{ControlAction, PrbBlocklist};

use crate::AgentError;

/// The simulated DU scheduler: which PRBs it must avoid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerState {
    pub current_blocklist: PrbBlocklist,
    pub last_control_seq: u32,
    pub applied_count: u64,
}

impl SchedulerState {
    pub fn new(n_prb: u16) -> Self {
        Self {
            current_blocklist: PrbBlocklist::new(n_prb),
            last_control_seq: 0,
            applied_count: 0,
        }
    }

    /// Replaces the blocklist; a mismatched PRB count leaves the state
    /// untouched.
    pub fn apply(&mut self, seq: u32, action: &ControlAction) -> Result<(), AgentError> {
        let ControlAction::Blocklist(list) = action;
        let expected = self.current_blocklist.n_prb;
        if list.n_prb != expected {
            return Err(AgentError::MismatchedPrbCount {
                expected,
                got: list.n_prb,
            });
        }
        self.current_blocklist = list.clone();
        self.last_control_seq = seq;
        self.applied_count += 1;
        Ok(())
    }

    pub fn is_blocked(&self, prb: u16) -> bool {
        self.current_blocklist.is_blocked(prb)
    }

    pub fn blocked(&self) -> Vec<u16> {
        self.current_blocklist.blocked().collect()
    }
}
