//! Control-loop latency of both arms on the same fixed-seed stream.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use e3_agent::{Incumbent, ScenarioConfig};
use e3_net::Mode;

use crate::session::{run_session, SessionOptions, SessionRun};
use crate::{BenchArm, BenchError, DappEnd};

#[derive(Debug, Clone)]
pub struct LatencyOptions {
    pub arms: Vec<BenchArm>,
    pub loops: u32,
    pub period_us: u32,
    pub seed: u64,
    pub transport: Mode,
    pub repeats: u32,
}

impl Default for LatencyOptions {
    fn default() -> Self {
        Self {
            arms: BenchArm::ALL.to_vec(),
            loops: 1000,
            period_us: 5_000,
            seed: 1,
            transport: Mode::VirtualChannel,
            repeats: 1,
        }
    }
}

/// The fixed two-incumbent scenario all latency runs use.
pub fn latency_scenario(loops: u32, period_us: u32, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        incumbents: vec![Incumbent::always(3, 1.0), Incumbent::always(40, 1.0)],
        indication_period_us: period_us,
        duration_us: u64::from(loops) * u64::from(period_us),
        seed,
        ..ScenarioConfig::default()
    }
}

/// One answered indication: in-dApp stage timings plus the agent-side RTT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRow {
    pub arm: BenchArm,
    pub seq: u32,
    pub decode_us: u64,
    pub process_us: u64,
    pub encode_us: u64,
    pub transmit_us: u64,
    pub cumulative_us: u64,
    pub rtt_us: u64,
}

impl StageRow {
    pub fn stage_sum(&self) -> u64 {
        self.decode_us + self.process_us + self.encode_us + self.transmit_us
    }
}

pub const STAGES_CSV_HEADER: &str = "arm,seq,decode_us,process_us,encode_us,transmit_us,cumulative_us,rtt_us";

/// Nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percentiles {
    pub median: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Percentiles {
    pub fn of(values: impl IntoIterator<Item = u64>) -> Option<Self> {
        let mut v: Vec<u64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let rank = |q: f64| {
            let i = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
            v[i] as f64
        };
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            (v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0
        };
        Some(Self {
            median,
            p90: rank(0.90),
            p99: rank(0.99),
        })
    }
}

/// Percentiles of every stage for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: BenchArm,
    pub loops: usize,
    pub decode: Percentiles,
    pub process: Percentiles,
    pub encode: Percentiles,
    pub transmit: Percentiles,
    pub cumulative: Percentiles,
    pub rtt: Percentiles,
}

impl ArmSummary {
    pub fn of(arm: BenchArm, rows: &[StageRow]) -> Option<Self> {
        let rows: Vec<&StageRow> = rows.iter().filter(|r| r.arm == arm).collect();
        let p = |f: fn(&StageRow) -> u64| Percentiles::of(rows.iter().map(|r| f(r)));
        Some(Self {
            arm,
            loops: rows.len(),
            decode: p(|r| r.decode_us)?,
            process: p(|r| r.process_us)?,
            encode: p(|r| r.encode_us)?,
            transmit: p(|r| r.transmit_us)?,
            cumulative: p(|r| r.cumulative_us)?,
            rtt: p(|r| r.rtt_us)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LatencyRun {
    pub rows: Vec<StageRow>,
    pub summaries: Vec<ArmSummary>,
    /// Control frames of each arm's first repeat, ordered by seq.
    pub controls: HashMap<BenchArm, Vec<Vec<u8>>>,
}

impl LatencyRun {
    pub fn summary(&self, arm: BenchArm) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm)
    }

    /// Sandbox median cumulative latency over native.
    pub fn overhead_ratio(&self) -> Option<f64> {
        overhead_ratio(&self.summaries)
    }
}

pub fn overhead_ratio(summaries: &[ArmSummary]) -> Option<f64> {
    let m = |a| summaries.iter().find(|s| s.arm == a).map(|s| s.cumulative.median);
    Some(m(BenchArm::Sandbox)? / m(BenchArm::Native)?)
}

/// Joins a session's stage records with the agent's loop records by seq.
pub fn stage_rows(run: &SessionRun) -> Vec<StageRow> {
    let rtt: HashMap<u32, u64> = run.agent.records.iter().map(|r| (r.seq, r.rtt_us)).collect();
    run.stages
        .iter()
        .filter_map(|s| {
            Some(StageRow {
                arm: run.arm,
                seq: s.seq,
                decode_us: s.decode_us.into(),
                process_us: s.process_us.into(),
                encode_us: s.encode_us.into(),
                transmit_us: s.transmit_us.into(),
                cumulative_us: s.cumulative_us.into(),
                rtt_us: *rtt.get(&s.seq)?,
            })
        })
        .collect()
}

pub fn run_latency(opts: &LatencyOptions, out_dir: Option<&Path>) -> Result<LatencyRun, BenchError> {
    let scenario = latency_scenario(opts.loops, opts.period_us, opts.seed);
    let timeout = Duration::from_micros(scenario.duration_us) * 3 + Duration::from_secs(10);
    let mut rows = Vec::new();
    let mut controls = HashMap::new();
    for rep in 0..opts.repeats.max(1) {
        for &arm in &opts.arms {
            let mut s = SessionOptions::new(arm, scenario.clone());
            s.transport = opts.transport;
            s.instrument = true;
            s.timeout = timeout;
            let run = run_session(&s)?;
            if run.end != DappEnd::Exited(0) {
                return Err(BenchError::DappFailed { arm, end: run.end });
            }
            let arm_rows = stage_rows(&run);
            if arm_rows.len() < opts.loops as usize {
                return Err(BenchError::InsufficientLoops {
                    arm,
                    got: arm_rows.len(),
                    want: opts.loops as usize,
                });
            }
            if rep == 0 {
                controls.insert(arm, run.control_frames().into_iter().map(<[u8]>::to_vec).collect());
            }
            rows.extend(arm_rows);
        }
    }
    let summaries = opts.arms.iter().filter_map(|&a| ArmSummary::of(a, &rows)).collect();
    let run = LatencyRun {
        rows,
        summaries,
        controls,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_stages_csv(BufWriter::new(File::create(dir.join("stages.csv"))?), &run.rows)?;
    }
    Ok(run)
}

pub fn write_stages_csv<W: Write>(mut w: W, rows: &[StageRow]) -> std::io::Result<()> {
    writeln!(w, "{STAGES_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.arm, r.seq, r.decode_us, r.process_us, r.encode_us, r.transmit_us, r.cumulative_us, r.rtt_us
        )?;
    }
    w.flush()
}

pub fn read_stages_csv<R: BufRead>(r: R) -> Result<Vec<StageRow>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |reason: &str| BenchError::Csv {
            file: "stages.csv".into(),
            line: i + 1,
            reason: reason.into(),
        };
        if i == 0 {
            if line.trim() != STAGES_CSV_HEADER {
                return Err(err("unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(err("expected 8 fields"));
        }
        let arm: BenchArm = f[0].parse().map_err(|_| err("unknown arm"))?;
        let n: Vec<u64> = f[1..]
            .iter()
            .map(|x| x.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| err("non-numeric field"))?;
        out.push(StageRow {
            arm,
            seq: u32::try_from(n[0]).map_err(|_| err("seq out of range"))?,
            decode_us: n[1],
            process_us: n[2],
            encode_us: n[3],
            transmit_us: n[4],
            cumulative_us: n[5],
            rtt_us: n[6],
        });
    }
    Ok(out)
}

pub fn read_stages_file(path: &Path) -> Result<Vec<StageRow>, BenchError> {
    let f = File::open(path).map_err(|_| BenchError::MissingInput(path.to_path_buf()))?;
    read_stages_csv(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_nearest_rank() {
        let p = Percentiles::of(1..=100).unwrap();
        assert_eq!((p.median, p.p90, p.p99), (50.5, 90.0, 99.0));
        let p = Percentiles::of([7]).unwrap();
        assert_eq!((p.median, p.p90, p.p99), (7.0, 7.0, 7.0));
        assert!(Percentiles::of([]).is_none());
    }

    #[test]
    fn stages_csv_round_trip() {
        let rows = vec![StageRow {
            arm: BenchArm::Sandbox,
            seq: 4,
            decode_us: 1,
            process_us: 2,
            encode_us: 3,
            transmit_us: 4,
            cumulative_us: 10,
            rtt_us: 12,
        }];
        let mut buf = Vec::new();
        write_stages_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "arm,seq,decode_us,process_us,encode_us,transmit_us,cumulative_us,rtt_us\nsandbox,4,1,2,3,4,10,12\n"
        );
        assert_eq!(read_stages_csv(&buf[..]).unwrap(), rows);
        assert!(read_stages_csv("arm,seq\n".as_bytes()).is_err());
    }
}
