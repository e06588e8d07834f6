//! Per-loop round-trip records and their CSV form.

use std::io::{self, BufRead, Write};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::AgentError;

/// Timing of one answered indication, in agent-clock microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopRecord {
    pub seq: u32,
    pub t_indication_sent_us: u64,
    pub t_control_received_us: u64,
    pub rtt_us: u64,
}

impl LoopRecord {
    pub fn new(seq: u32, sent: u64, received: u64) -> Self {
        Self {
            seq,
            t_indication_sent_us: sent,
            t_control_received_us: received,
            rtt_us: received.saturating_sub(sent),
        }
    }
}

pub const LOOP_CSV_HEADER: &str = "seq,t_sent_us,t_recv_us,rtt_us";

/// Shared, append-only list of loop records. The agent appends; anyone
/// holding a clone can take a snapshot while it runs.
#[derive(Debug, Clone, Default)]
pub struct LoopLog(Arc<Mutex<Vec<LoopRecord>>>);

impl LoopLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Vec<LoopRecord>> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn push(&self, r: LoopRecord) {
        self.lock().push(r);
    }

    pub fn snapshot(&self) -> Vec<LoopRecord> {
        self.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn write_loop_csv<W: Write>(mut w: W, records: &[LoopRecord]) -> io::Result<()> {
    writeln!(w, "{LOOP_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{}",
            r.seq, r.t_indication_sent_us, r.t_control_received_us, r.rtt_us
        )?;
    }
    w.flush()
}

pub fn read_loop_csv<R: BufRead>(r: R) -> Result<Vec<LoopRecord>, AgentError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 {
            if line != LOOP_CSV_HEADER {
                return Err(AgentError::LoopLog {
                    line: 1,
                    reason: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| AgentError::LoopLog {
            line: i + 1,
            reason: reason.into(),
        };
        let f: Vec<u64> = line
            .split(',')
            .map(|x| x.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err("non-numeric field"))?;
        let [seq, sent, recv, rtt] = f[..] else {
            return Err(err("expected 4 fields"));
        };
        let seq = u32::try_from(seq).map_err(|_| err("seq out of range"))?;
        if recv.checked_sub(sent) != Some(rtt) {
            return Err(err("rtt does not match timestamps"));
        }
        out.push(LoopRecord::new(seq, sent, recv));
    }
    Ok(out)
}
