//! Offline summary of an output directory.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::footprint::{ratios, read_footprint_file, FootprintRecord};
use crate::isolation::{evaluate_dir, IsolationVerdict, ShareRow};
use crate::latency::{overhead_ratio, read_stages_file, ArmSummary, Percentiles, StageRow};
use crate::{BenchArm, BenchError};

/// Real-time bound on the sandboxed median cumulative latency.
pub const REAL_TIME_BOUND_US: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyVerdict {
    pub sandbox_median_us: Option<f64>,
    pub native_median_us: Option<f64>,
    /// Largest |stage sum − cumulative| over all rows.
    pub max_additivity_error_us: u64,
    pub real_time_ok: bool,
    pub ordering_ok: bool,
    pub additivity_ok: bool,
}

impl LatencyVerdict {
    pub fn from_rows(rows: &[StageRow], summaries: &[ArmSummary]) -> Self {
        let median = |a| summaries.iter().find(|s: &&ArmSummary| s.arm == a).map(|s| s.cumulative.median);
        let sandbox = median(BenchArm::Sandbox);
        let native = median(BenchArm::Native);
        let max_err = rows
            .iter()
            .map(|r| r.stage_sum().abs_diff(r.cumulative_us))
            .max()
            .unwrap_or(0);
        Self {
            sandbox_median_us: sandbox,
            native_median_us: native,
            max_additivity_error_us: max_err,
            real_time_ok: sandbox.is_none_or(|m| m < REAL_TIME_BOUND_US),
            ordering_ok: match (native, sandbox) {
                (Some(n), Some(s)) => n <= s,
                _ => true,
            },
            additivity_ok: max_err <= 1,
        }
    }

    pub fn passed(&self) -> bool {
        self.real_time_ok && self.ordering_ok && self.additivity_ok
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FootprintVerdict {
    pub cpu_ratio: Option<f64>,
    pub rss_ratio: Option<f64>,
    pub cpu_positive: bool,
    pub rss_ratio_above_one: bool,
}

impl FootprintVerdict {
    pub fn from_records(records: &[FootprintRecord]) -> Self {
        let r = ratios(records);
        Self {
            cpu_ratio: r.map(|r| r.0),
            rss_ratio: r.map(|r| r.1),
            cpu_positive: !records.is_empty() && records.iter().all(|r| r.cpu_time_ms > 0.0),
            rss_ratio_above_one: r.is_none_or(|r| r.1 > 1.0),
        }
    }

    pub fn passed(&self) -> bool {
        self.cpu_positive && self.rss_ratio_above_one
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub isolation: Option<(Vec<ShareRow>, IsolationVerdict)>,
    pub latency: Option<(Vec<ArmSummary>, LatencyVerdict)>,
    pub footprint: Option<(Vec<FootprintRecord>, FootprintVerdict)>,
}

impl Report {
    /// Reads whatever experiment outputs exist in `dir`.
    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let mut r = Self::default();
        if dir.join("shares.csv").exists() {
            let (_, shares, v) = evaluate_dir(dir)?;
            r.isolation = Some((shares, v));
        }
        if dir.join("stages.csv").exists() {
            let rows = read_stages_file(&dir.join("stages.csv"))?;
            let summaries: Vec<ArmSummary> = BenchArm::ALL.iter().filter_map(|&a| ArmSummary::of(a, &rows)).collect();
            let v = LatencyVerdict::from_rows(&rows, &summaries);
            r.latency = Some((summaries, v));
        }
        if dir.join("footprint.csv").exists() {
            let recs = read_footprint_file(&dir.join("footprint.csv"))?;
            let v = FootprintVerdict::from_records(&recs);
            r.footprint = Some((recs, v));
        }
        if r.isolation.is_none() && r.latency.is_none() && r.footprint.is_none() {
            return Err(BenchError::MissingInput(dir.join("{shares,stages,footprint}.csv")));
        }
        Ok(r)
    }

    pub fn passed(&self) -> bool {
        self.isolation.as_ref().is_none_or(|(_, v)| v.passed())
            && self.latency.as_ref().is_none_or(|(_, v)| v.passed())
            && self.footprint.as_ref().is_none_or(|(_, v)| v.passed())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        if let Some((_, v)) = &self.isolation {
            let _ = writeln!(s, "isolation");
            let _ = writeln!(
                s,
                "  phase 1  regular {:.2}% [{:.2}, {:.2}]  misbehaving {:.2}% [{:.2}, {:.2}]  {}",
                v.phase1_regular_mean,
                v.phase1_regular_range.0,
                v.phase1_regular_range.1,
                v.phase1_misbehaving_mean,
                v.phase1_misbehaving_range.0,
                v.phase1_misbehaving_range.1,
                verdict(v.phase1_ok)
            );
            let _ = writeln!(s, "  phase 2  regular min {:.2}%  {}", v.phase2_regular_min, verdict(v.phase2_ok));
            let _ = writeln!(s, "  phase 3  max deviation {:.2} pp  {}", v.phase3_max_dev_pp, verdict(v.phase3_ok));
            let _ = writeln!(s, "  budget   {} violations  {}", v.budget_violations, verdict(v.budget_ok));
        }
        if let Some((sums, v)) = &self.latency {
            let _ = writeln!(s, "latency (us)            median       p90       p99");
            for a in sums {
                let row = |s: &mut String, name: &str, p: &Percentiles| {
                    let _ = writeln!(s, "  {:<7} {:<10} {:>9.1} {:>9.1} {:>9.1}", a.arm.name(), name, p.median, p.p90, p.p99);
                };
                row(&mut s, "decode", &a.decode);
                row(&mut s, "process", &a.process);
                row(&mut s, "encode", &a.encode);
                row(&mut s, "transmit", &a.transmit);
                row(&mut s, "cumulative", &a.cumulative);
                row(&mut s, "rtt", &a.rtt);
            }
            if let Some(r) = overhead_ratio(sums) {
                let _ = writeln!(s, "  sandbox/native median cumulative: {r:.2}");
            }
            let _ = writeln!(s, "  real-time bound  {}", verdict(v.real_time_ok));
            let _ = writeln!(s, "  native <= sandbox  {}", verdict(v.ordering_ok));
            let _ = writeln!(s, "  stage additivity (max err {} us)  {}", v.max_additivity_error_us, verdict(v.additivity_ok));
        }
        if let Some((recs, v)) = &self.footprint {
            let _ = writeln!(s, "footprint");
            for r in recs {
                let _ = writeln!(
                    s,
                    "  {:<7} cpu {:>10.2} ms  peak rss {:>8.2} MiB",
                    r.arm.name(),
                    r.cpu_time_ms,
                    r.peak_rss_bytes as f64 / (1024.0 * 1024.0)
                );
            }
            if let (Some(c), Some(m)) = (v.cpu_ratio, v.rss_ratio) {
                let _ = writeln!(s, "  sandbox/native cpu {c:.2}  memory {m:.2}");
            }
            let _ = writeln!(s, "  cpu time > 0  {}", verdict(v.cpu_positive));
            let _ = writeln!(s, "  memory ratio > 1  {}", verdict(v.rss_ratio_above_one));
        }
        s
    }

    /// Writes gnuplot-friendly data files next to the inputs.
    pub fn write_plot_data(&self, dir: &Path) -> Result<(), BenchError> {
        if let Some((shares, _)) = &self.isolation {
            let mut w = BufWriter::new(File::create(dir.join("isolation.dat"))?);
            writeln!(w, "# t_s regular_pct misbehaving_pct phase")?;
            for r in shares {
                writeln!(w, "{:.3} {:.4} {:.4} {}", r.t_ms / 1000.0, r.regular_pct, r.misbehaving_pct, r.phase)?;
            }
            w.flush()?;
        }
        if self.latency.is_some() {
            let rows = read_stages_file(&dir.join("stages.csv"))?;
            for arm in BenchArm::ALL {
                let mut v: Vec<u64> = rows.iter().filter(|r| r.arm == arm).map(|r| r.cumulative_us).collect();
                if v.is_empty() {
                    continue;
                }
                v.sort_unstable();
                let mut w = BufWriter::new(File::create(dir.join(format!("latency_cdf_{arm}.dat")))?);
                writeln!(w, "# cumulative_us fraction")?;
                for (i, x) in v.iter().enumerate() {
                    writeln!(w, "{x} {:.5}", (i + 1) as f64 / v.len() as f64)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}
