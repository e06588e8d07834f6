use std::io::{self, BufRead, Write};

use crate::InstanceId;

/// Fuel consumed by one instance in one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowUsage {
    pub instance: InstanceId,
    pub window_index: u64,
    /// Window start, in milliseconds since the host was created.
    pub t_ms: f64,
    pub instructions_used: u64,
    /// `None` when unlimited.
    pub budget: Option<u64>,
    /// The budget ran out during this window.
    pub suspended: bool,
}

pub const CSV_HEADER: &str = "instance,window_index,t_ms,instructions_used,budget,suspended";

pub fn write_csv<W: Write>(mut w: W, rows: &[WindowUsage]) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let budget = r.budget.map_or_else(|| "unlimited".to_string(), |b| b.to_string());
        writeln!(
            w,
            "{},{},{:.3},{},{},{}",
            r.instance, r.window_index, r.t_ms, r.instructions_used, budget, r.suspended
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> io::Result<Vec<WindowUsage>> {
    let bad = |line: usize, what: &str| {
        io::Error::new(io::ErrorKind::InvalidData, format!("usage csv line {line}: {what}"))
    };
    let mut rows = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 {
            if line.trim() != CSV_HEADER {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n + 1, "expected 6 fields"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(n + 1, "bad integer"));
        rows.push(WindowUsage {
            instance: InstanceId(f[0].parse().map_err(|_| bad(n + 1, "bad instance"))?),
            window_index: num(f[1])?,
            t_ms: f[2].parse().map_err(|_| bad(n + 1, "bad t_ms"))?,
            instructions_used: num(f[3])?,
            budget: match f[4] {
                "unlimited" => None,
                b => Some(num(b)?),
            },
            suspended: f[5].parse().map_err(|_| bad(n + 1, "bad suspended flag"))?,
        });
    }
    Ok(rows)
}

/// Closed windows where a budgeted instance used more than `budget + epsilon`.
pub fn budget_violations(rows: &[WindowUsage], epsilon: u64) -> Vec<WindowUsage> {
    rows.iter()
        .filter(|r| r.budget.is_some_and(|b| r.instructions_used > b.saturating_add(epsilon)))
        .copied()
        .collect()
}
