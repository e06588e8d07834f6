//! CPU time and peak memory of each arm, measured on a child process that
//! runs only the dApp.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use e3_agent::{spawn, ServeOptions};
use e3_net::Network;
use spectrum_dapp::{run_dapp, NativeNet, SensingConfig};
use wasm_host::{Entry, Host, HostConfig, InstanceSpec, InstanceState};

use crate::latency::latency_scenario;
use crate::{BenchArm, BenchError, DAPP_WASM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintRecord {
    pub arm: BenchArm,
    /// User plus system CPU time of the dApp process.
    pub cpu_time_ms: f64,
    pub peak_rss_bytes: u64,
}

pub const FOOTPRINT_CSV_HEADER: &str = "arm,cpu_time_ms,peak_rss_bytes";

/// Runs one dApp to completion in this process over loopback TCP and
/// returns its exit code. This is what the footprint child executes.
pub fn run_dapp_process(arm: BenchArm, cfg: &SensingConfig) -> Result<i32, BenchError> {
    let net = Network::loopback_tcp();
    match arm {
        BenchArm::Native => Ok(run_dapp(&mut NativeNet::new(net), cfg).exit as i32),
        BenchArm::Sandbox => {
            let mut host = Host::new(net, HostConfig::default());
            let module = host.load_module(DAPP_WASM)?;
            let id = host.spawn(
                &module,
                InstanceSpec::new("spectrum-dapp")
                    .allow(&cfg.agent_host, cfg.agent_port)
                    .entry(Entry::Config(cfg.to_env().into_bytes())),
            )?;
            host.run(Duration::from_secs(24 * 3600), |_| {});
            Ok(match host.state(id) {
                Some(InstanceState::Exited(c)) => c,
                _ => -1,
            })
        }
    }
}

#[cfg(target_os = "linux")]
fn wait_with_rusage(pid: u32) -> Result<(i32, f64, u64), BenchError> {
    let mut status = 0i32;
    // SAFETY: zeroed rusage is a valid out-parameter; pid is our child.
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    let r = unsafe { libc::wait4(pid as libc::pid_t, &mut status, 0, &mut ru) };
    if r < 0 {
        return Err(std::io::Error::last_os_error().into());
    }
    let tv = |t: libc::timeval| t.tv_sec as f64 * 1000.0 + t.tv_usec as f64 / 1000.0;
    let cpu_ms = tv(ru.ru_utime) + tv(ru.ru_stime);
    // ru_maxrss is in KiB on Linux.
    let rss = ru.ru_maxrss as u64 * 1024;
    let code = if libc::WIFEXITED(status) {
        libc::WEXITSTATUS(status)
    } else {
        -1
    };
    Ok((code, cpu_ms, rss))
}

#[cfg(not(target_os = "linux"))]
fn wait_with_rusage(_pid: u32) -> Result<(i32, f64, u64), BenchError> {
    Err(BenchError::UnsupportedPlatform)
}

/// Runs each arm as a child of `exe` (the `bench` binary) against an agent
/// in this process for `duration`, and measures the child.
pub fn run_footprint(
    exe: &Path,
    arms: &[BenchArm],
    duration: Duration,
    period_us: u32,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<FootprintRecord>, BenchError> {
    if !cfg!(target_os = "linux") {
        return Err(BenchError::UnsupportedPlatform);
    }
    let loops = (duration.as_micros() / u128::from(period_us.max(1))).max(1) as u32;
    let mut out = Vec::new();
    for &arm in arms {
        let scenario = latency_scenario(loops, period_us, seed);
        let net = Network::loopback_tcp();
        let agent = spawn(
            &net,
            "127.0.0.1",
            0,
            scenario,
            ServeOptions {
                deadline: Some(duration * 3 + Duration::from_secs(10)),
                ..Default::default()
            },
        )?;
        let child = Command::new(exe)
            .args(["dapp", "--arm", arm.name(), "--agent-host", "127.0.0.1", "--agent-port"])
            .arg(agent.endpoint().port.to_string())
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()?;
        let (code, cpu_time_ms, peak_rss_bytes) = wait_with_rusage(child.id())?;
        let report = agent.join()?;
        if code != 0 {
            return Err(BenchError::DappFailed {
                arm,
                end: crate::DappEnd::Exited(code),
            });
        }
        log::info!("{arm}: {} loops, cpu {cpu_time_ms:.1} ms, rss {peak_rss_bytes}", report.records.len());
        out.push(FootprintRecord {
            arm,
            cpu_time_ms,
            peak_rss_bytes,
        });
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_footprint_csv(BufWriter::new(File::create(dir.join("footprint.csv"))?), &out)?;
    }
    Ok(out)
}

/// Sandbox over native CPU and memory ratios.
pub fn ratios(records: &[FootprintRecord]) -> Option<(f64, f64)> {
    let get = |a| records.iter().find(|r| r.arm == a);
    let (n, s) = (get(BenchArm::Native)?, get(BenchArm::Sandbox)?);
    Some((
        s.cpu_time_ms / n.cpu_time_ms,
        s.peak_rss_bytes as f64 / n.peak_rss_bytes as f64,
    ))
}

pub fn write_footprint_csv<W: Write>(mut w: W, rows: &[FootprintRecord]) -> std::io::Result<()> {
    writeln!(w, "{FOOTPRINT_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:.3},{}", r.arm, r.cpu_time_ms, r.peak_rss_bytes)?;
    }
    w.flush()
}

pub fn read_footprint_file(path: &Path) -> Result<Vec<FootprintRecord>, BenchError> {
    let f = File::open(path).map_err(|_| BenchError::MissingInput(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let err = |reason: &str| BenchError::Csv {
            file: "footprint.csv".into(),
            line: i + 1,
            reason: reason.into(),
        };
        if i == 0 {
            if line.trim() != FOOTPRINT_CSV_HEADER {
                return Err(err("unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let [arm, cpu, rss] = f[..] else {
            return Err(err("expected 3 fields"));
        };
        out.push(FootprintRecord {
            arm: arm.parse().map_err(|_| err("unknown arm"))?,
            cpu_time_ms: cpu.parse().map_err(|_| err("bad cpu_time_ms"))?,
            peak_rss_bytes: rss.parse().map_err(|_| err("bad peak_rss_bytes"))?,
        });
    }
    Ok(out)
}
