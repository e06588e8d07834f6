//! Two synthetic-load guests sharing the host: a regular one at 60% of
//! capacity and one that turns greedy, first unmetered, then under budgets.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use e3_net::{Network, Notifier, Stream, WatchedListener};
use serde::{Deserialize, Serialize};
use wasm_host::{usage, Entry, GasBudget, Host, HostConfig, InstanceId, InstanceSpec, WindowUsage, EPSILON_FUEL};

use crate::guest::{DRIVER_HOST, LOAD_WAT};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationScenario {
    pub regular_budget_pct: f64,
    pub misbehaving_initial_pct: f64,
    pub saturation_at_us: u64,
    pub metering_on_at_us: u64,
    pub total_us: u64,
    pub window_us: u64,
    pub avg_window_us: u64,
    pub calibration_us: u64,
}

impl Default for IsolationScenario {
    fn default() -> Self {
        Self {
            regular_budget_pct: 60.0,
            misbehaving_initial_pct: 20.0,
            saturation_at_us: 2_000_000,
            metering_on_at_us: 3_000_000,
            total_us: 5_000_000,
            window_us: 10_000,
            avg_window_us: 100_000,
            calibration_us: 1_000_000,
        }
    }
}

impl IsolationScenario {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::Scenario(m.to_string()));
        for p in [self.regular_budget_pct, self.misbehaving_initial_pct] {
            if !(p > 0.0 && p <= 100.0) {
                return bad("percentages must lie in (0, 100]");
            }
        }
        if !(self.saturation_at_us < self.metering_on_at_us && self.metering_on_at_us < self.total_us) {
            return bad("expected saturation_at_us < metering_on_at_us < total_us");
        }
        if self.window_us == 0 || self.avg_window_us < self.window_us || self.avg_window_us % self.window_us != 0 {
            return bad("avg_window_us must be a positive multiple of window_us");
        }
        if self.calibration_us == 0 {
            return bad("calibration_us must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.validate()?;
        Ok(s)
    }

    fn windows_per_avg(&self) -> u64 {
        self.avg_window_us / self.window_us
    }

    fn window_at(&self, t_us: u64) -> u64 {
        t_us / self.window_us
    }
}

/// Phase of the experiment at a given time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Both guests behave.
    Fair = 1,
    /// The misbehaving guest saturates, no budgets.
    Contended = 2,
    /// Budgets enforced.
    Metered = 3,
}

impl Phase {
    pub fn at(scn: &IsolationScenario, t_us: u64) -> Self {
        if t_us < scn.saturation_at_us {
            Self::Fair
        } else if t_us < scn.metering_on_at_us {
            Self::Contended
        } else {
            Self::Metered
        }
    }
}

/// Mean share of capacity over one averaging window, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShareRow {
    pub t_ms: f64,
    pub phase: u8,
    pub regular_pct: f64,
    pub misbehaving_pct: f64,
}

pub const SHARES_CSV_HEADER: &str = "t_ms,phase,regular_pct,misbehaving_pct";

#[derive(Debug, Clone)]
pub struct IsolationRun {
    pub scenario: IsolationScenario,
    /// Capacity from the calibration probe, fuel per window.
    pub capacity: u64,
    /// Capacity each window was measured against.
    pub window_capacity: Vec<u64>,
    /// Fuel the load guest burns per spin iteration.
    pub fuel_per_iteration: u64,
    /// Window time added by stall compensation.
    pub stalled_ms: f64,
    pub regular: InstanceId,
    pub misbehaving: InstanceId,
    pub usage: Vec<WindowUsage>,
    pub shares: Vec<ShareRow>,
    pub verdict: IsolationVerdict,
}

/// Pass/fail of each phase predicate with the numbers behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationVerdict {
    pub phase1_regular_mean: f64,
    pub phase1_misbehaving_mean: f64,
    /// Per-window extremes in phase 1, after the start-up window.
    pub phase1_regular_range: (f64, f64),
    pub phase1_misbehaving_range: (f64, f64),
    pub phase1_ok: bool,
    pub phase2_regular_min: f64,
    pub phase2_ok: bool,
    /// Largest deviation from target in phase 3 after settling, in points.
    pub phase3_max_dev_pp: f64,
    pub phase3_ok: bool,
    pub budget_violations: usize,
    pub budget_ok: bool,
}

impl IsolationVerdict {
    pub fn passed(&self) -> bool {
        self.phase1_ok && self.phase2_ok && self.phase3_ok && self.budget_ok
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Phase-1 bounds: within ±10% of the target, and within ±5 points for
/// targets of at least 50%.
fn phase1_bounds(target: f64) -> (f64, f64) {
    let rel = (target * 0.9, target * 1.1);
    if target >= 50.0 {
        (rel.0.max(target - 5.0), rel.1.min(target + 5.0))
    } else {
        rel
    }
}

/// Evaluates the phase predicates from share rows and usage records alone.
pub fn evaluate(scn: &IsolationScenario, shares: &[ShareRow], usage_rows: &[WindowUsage]) -> IsolationVerdict {
    let in_phase = |p: Phase, skip_first: bool| -> Vec<&ShareRow> {
        let mut rows: Vec<&ShareRow> = shares.iter().filter(|r| r.phase == p as u8).collect();
        if skip_first && !rows.is_empty() {
            rows.remove(0);
        }
        rows
    };

    // The first averaging window includes start-up: guests connect during
    // window 0 and receive no work until window 1.
    let p1 = in_phase(Phase::Fair, true);
    let reg1: Vec<f64> = p1.iter().map(|r| r.regular_pct).collect();
    let mis1: Vec<f64> = p1.iter().map(|r| r.misbehaving_pct).collect();
    let (reg_lo, reg_hi) = phase1_bounds(scn.regular_budget_pct);
    let (mis_lo, mis_hi) = phase1_bounds(scn.misbehaving_initial_pct);
    let reg_range = range(&reg1);
    let mis_range = range(&mis1);
    let reg1_mean = mean(&reg1);
    let mis1_mean = mean(&mis1);
    let phase1_ok = !p1.is_empty()
        && (reg_lo..=reg_hi).contains(&reg1_mean)
        && (mis_lo..=mis_hi).contains(&mis1_mean);

    let p2 = in_phase(Phase::Contended, false);
    let reg2_min = p2.iter().map(|r| r.regular_pct).fold(f64::INFINITY, f64::min);
    let phase2_ok = reg2_min < reg1_mean.min(reg_lo);

    let p3 = in_phase(Phase::Metered, true);
    let dev = p3
        .iter()
        .flat_map(|r| {
            [
                (r.regular_pct - scn.regular_budget_pct).abs(),
                (r.misbehaving_pct - scn.misbehaving_initial_pct).abs(),
            ]
        })
        .fold(0.0f64, f64::max);
    let phase3_ok = !p3.is_empty() && dev <= 5.0;

    let violations = usage::budget_violations(usage_rows, EPSILON_FUEL).len();
    IsolationVerdict {
        phase1_regular_mean: reg1_mean,
        phase1_misbehaving_mean: mis1_mean,
        phase1_regular_range: reg_range,
        phase1_misbehaving_range: mis_range,
        phase1_ok,
        phase2_regular_min: reg2_min,
        phase2_ok,
        phase3_max_dev_pp: dev,
        phase3_ok,
        budget_violations: violations,
        budget_ok: violations == 0,
    }
}

/// Averages per-window usage into shares of the per-window capacity.
/// Windows beyond the end of `capacity` are not reported.
pub fn shares_from_usage(
    scn: &IsolationScenario,
    usage_rows: &[WindowUsage],
    capacity: &[u64],
    regular: InstanceId,
    misbehaving: InstanceId,
) -> Vec<ShareRow> {
    let per = scn.windows_per_avg();
    let last = usage_rows
        .iter()
        .map(|u| u.window_index)
        .max()
        .map_or(0, |w| w + 1)
        .min(capacity.len() as u64);
    let used = |id: InstanceId, w: u64| {
        usage_rows
            .iter()
            .find(|u| u.instance == id && u.window_index == w)
            .map_or(0, |u| u.instructions_used)
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start + per <= last {
        let pct = |id| {
            let total: u64 = (start..start + per).map(|w| used(id, w)).sum();
            let cap: u64 = capacity[start as usize..(start + per) as usize].iter().sum();
            100.0 * total as f64 / cap.max(1) as f64
        };
        let t_us = start * scn.window_us;
        out.push(ShareRow {
            t_ms: t_us as f64 / 1000.0,
            phase: Phase::at(scn, t_us) as u8,
            regular_pct: pct(regular),
            misbehaving_pct: pct(misbehaving),
        });
        start += per;
    }
    out
}

/// Slice overrun treated as the host being descheduled.
const STALL_THRESHOLD_US: u64 = 200;

/// What a lone load guest achieves on this machine.
struct LoadProbe {
    /// Execution rate in fuel per second.
    rate: f64,
    fuel_per_iteration: u64,
    /// Fuel of one request apart from the spin loop.
    fixed: u64,
}

/// Runs a lone [`LOAD_WAT`] guest through the scheduler: two requests of
/// different length give the per-iteration and fixed cost, then unlimited
/// work for `calibration_us` gives the execution rate.
fn probe_load(window_us: u64, calibration_us: u64) -> Result<LoadProbe, BenchError> {
    const SHORT: u64 = 10_000;
    const LONG: u64 = 110_000;
    let net = Network::virtual_channels();
    let listener = net.listen(DRIVER_HOST, 0)?;
    let port = listener.endpoint().port;
    let mut host = Host::new(
        net,
        HostConfig {
            window_us,
            stall_threshold_us: Some(STALL_THRESHOLD_US),
            ..HostConfig::default()
        },
    );
    let module = host.load_module(&wat::parse_str(LOAD_WAT).expect("built-in module"))?;
    let id = host.spawn(
        &module,
        InstanceSpec::new("probe")
            .allow(DRIVER_HOST, port)
            .entry(Entry::Args(vec![i32::from(port)])),
    )?;
    let listener = listener.into_watched(Notifier::new())?;
    let mut conn: Option<Stream> = None;
    // Window indices at which SHORT, LONG and unlimited work were sent.
    let mut marks = Vec::new();
    let spin_windows = calibration_us.div_ceil(window_us).max(1);
    let limit = Duration::from_micros(calibration_us) + Duration::from_secs(5);
    host.run(limit, |ctl| {
        if conn.is_none() {
            conn = listener.try_accept().ok().flatten();
        }
        let Some(c) = conn.as_mut() else { return };
        // One request per five windows, so each finishes before the next.
        if marks.len() < 3 && ctl.index() % 5 == 0 {
            let n = [SHORT, LONG, u64::MAX][marks.len()];
            marks.push(ctl.index());
            let _ = std::io::Write::write_all(c, &n.to_le_bytes());
        } else if marks.len() == 3 && ctl.index() >= marks[2] + spin_windows {
            ctl.stop();
        }
    });
    if marks.len() < 3 {
        return Err(BenchError::Scenario("load guest never connected".into()));
    }
    let used = |from: u64, to: u64| -> u64 {
        host.usage()
            .iter()
            .filter(|u| u.instance == id && (from..to).contains(&u.window_index))
            .map(|u| u.instructions_used)
            .sum()
    };
    let short = used(marks[0], marks[1]);
    let long = used(marks[1], marks[2]);
    let fuel_per_iteration = ((long - short) / (LONG - SHORT)).max(1);
    let fixed = short.saturating_sub(fuel_per_iteration * SHORT);
    let rate = host
        .fuel_rate()
        .ok_or_else(|| BenchError::Scenario("calibration too short".into()))?;
    Ok(LoadProbe {
        rate,
        fuel_per_iteration,
        fixed,
    })
}

struct Driver {
    listener: WatchedListener,
    conn: Option<Stream>,
}

impl Driver {
    fn poll(&mut self) {
        if self.conn.is_none() {
            self.conn = self.listener.try_accept().ok().flatten();
        }
    }

    fn send(&mut self, n: u64) {
        if let Some(c) = self.conn.as_mut() {
            let _ = std::io::Write::write_all(c, &n.to_le_bytes());
        }
    }
}

/// Runs the whole experiment. `out_dir`, when given, receives
/// `usage.csv`, `shares.csv` and `isolation.json`.
pub fn run_isolation(scn: &IsolationScenario, out_dir: Option<&Path>) -> Result<IsolationRun, BenchError> {
    scn.validate()?;
    let net = Network::virtual_channels();
    let mut host = Host::new(
        net.clone(),
        HostConfig {
            window_us: scn.window_us,
            stall_threshold_us: Some(STALL_THRESHOLD_US),
            ..HostConfig::default()
        },
    );
    let LoadProbe {
        rate,
        fuel_per_iteration,
        fixed,
    } = probe_load(scn.window_us, scn.calibration_us)?;
    let window_secs = scn.window_us as f64 / 1e6;
    let capacity = (rate * window_secs) as u64;
    let iterations = |pct: f64, capacity: u64| {
        let fuel = GasBudget::percent_of(pct, capacity).limit().unwrap_or(0);
        fuel.saturating_sub(fixed) / fuel_per_iteration
    };

    let module = host.load_module(&wat::parse_str(LOAD_WAT).expect("built-in module"))?;
    let notifier = Notifier::new();
    let mut drivers = Vec::new();
    let mut ids = Vec::new();
    for name in ["regular", "misbehaving"] {
        let listener = net.listen(DRIVER_HOST, 0)?;
        let port = listener.endpoint().port;
        ids.push(host.spawn(
            &module,
            InstanceSpec::new(name)
                .allow(DRIVER_HOST, port)
                .entry(Entry::Args(vec![i32::from(port)])),
        )?);
        drivers.push(Driver {
            listener: listener.into_watched(notifier.clone())?,
            conn: None,
        });
    }
    let (regular, misbehaving) = (ids[0], ids[1]);
    let saturate_at = scn.window_at(scn.saturation_at_us);
    let meter_at = scn.window_at(scn.metering_on_at_us);
    let stop_at = scn.window_at(scn.total_us);
    // Capacity of each window: the execution rate measured so far times the
    // window length. The machine's speed drifts, so it is re-read every window.
    let mut window_capacity = Vec::new();

    let report = host.run(Duration::from_micros(scn.total_us) * 2, |ctl| {
        let w = ctl.index();
        if w >= stop_at {
            ctl.stop();
            return;
        }
        let cap = (ctl.fuel_rate().unwrap_or(rate) * window_secs) as u64;
        window_capacity.push(cap);
        for d in &mut drivers {
            d.poll();
        }
        drivers[0].send(iterations(scn.regular_budget_pct, cap));
        if w < saturate_at {
            drivers[1].send(iterations(scn.misbehaving_initial_pct, cap));
        } else if w == saturate_at {
            drivers[1].send(u64::MAX);
        }
        if w >= meter_at {
            let _ = ctl.set_budget(regular, GasBudget::percent_of(scn.regular_budget_pct, cap));
            let _ = ctl.set_budget(misbehaving, GasBudget::percent_of(scn.misbehaving_initial_pct, cap));
        }
    });

    let usage_rows = host.usage().to_vec();
    let shares = shares_from_usage(scn, &usage_rows, &window_capacity, regular, misbehaving);
    let verdict = evaluate(scn, &shares, &usage_rows);
    let run = IsolationRun {
        scenario: scn.clone(),
        capacity,
        window_capacity,
        fuel_per_iteration,
        stalled_ms: report.stalled.as_secs_f64() * 1000.0,
        regular,
        misbehaving,
        usage: usage_rows,
        shares,
        verdict,
    };
    if let Some(dir) = out_dir {
        run.write(dir)?;
    }
    Ok(run)
}

#[derive(Debug, Serialize, Deserialize)]
struct IsolationMeta {
    scenario: IsolationScenario,
    capacity: u64,
    #[serde(default)]
    window_capacity: Vec<u64>,
    fuel_per_iteration: u64,
    #[serde(default)]
    stalled_ms: f64,
    regular_instance: u32,
    misbehaving_instance: u32,
}

impl IsolationRun {
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        std::fs::create_dir_all(dir)?;
        usage::write_csv(BufWriter::new(File::create(dir.join("usage.csv"))?), &self.usage)?;
        write_shares_csv(BufWriter::new(File::create(dir.join("shares.csv"))?), &self.shares)?;
        let meta = IsolationMeta {
            scenario: self.scenario.clone(),
            capacity: self.capacity,
            window_capacity: self.window_capacity.clone(),
            fuel_per_iteration: self.fuel_per_iteration,
            stalled_ms: self.stalled_ms,
            regular_instance: self.regular.0,
            misbehaving_instance: self.misbehaving.0,
        };
        std::fs::write(dir.join("isolation.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }
}

/// Re-evaluates a stored run from `shares.csv`, `usage.csv` and
/// `isolation.json` in `dir`.
pub fn evaluate_dir(dir: &Path) -> Result<(IsolationScenario, Vec<ShareRow>, IsolationVerdict), BenchError> {
    let open = |name: &str| {
        let p = dir.join(name);
        File::open(&p).map_err(|_| BenchError::MissingInput(p))
    };
    let meta: IsolationMeta = serde_json::from_reader(open("isolation.json")?)?;
    let shares = read_shares_csv(BufReader::new(open("shares.csv")?))?;
    let usage_rows = usage::read_csv(BufReader::new(open("usage.csv")?)).map_err(|e| BenchError::Csv {
        file: "usage.csv".into(),
        line: 0,
        reason: e.to_string(),
    })?;
    let verdict = evaluate(&meta.scenario, &shares, &usage_rows);
    Ok((meta.scenario, shares, verdict))
}

pub fn write_shares_csv<W: Write>(mut w: W, rows: &[ShareRow]) -> std::io::Result<()> {
    writeln!(w, "{SHARES_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{:.3},{},{:.4},{:.4}", r.t_ms, r.phase, r.regular_pct, r.misbehaving_pct)?;
    }
    w.flush()
}

pub fn read_shares_csv<R: BufRead>(r: R) -> Result<Vec<ShareRow>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |reason: &str| BenchError::Csv {
            file: "shares.csv".into(),
            line: i + 1,
            reason: reason.into(),
        };
        if i == 0 {
            if line.trim() != SHARES_CSV_HEADER {
                return Err(err("unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [t, phase, reg, mis] = f[..] else {
            return Err(err("expected 4 fields"));
        };
        out.push(ShareRow {
            t_ms: t.parse().map_err(|_| err("bad t_ms"))?,
            phase: phase.parse().map_err(|_| err("bad phase"))?,
            regular_pct: reg.parse().map_err(|_| err("bad regular_pct"))?,
            misbehaving_pct: mis.parse().map_err(|_| err("bad misbehaving_pct"))?,
        });
    }
    Ok(out)
}
