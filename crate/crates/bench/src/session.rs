//! One closed-loop run: agent, dApp (either arm) and stage-log collection.

use std::fmt;
use std::io::Read;
use std::thread;
use std::time::{Duration, Instant};

use e3_agent::{spawn, AgentReport, ScenarioConfig, ServeOptions};
use e3_codec::{decode, ControlAction, E3Message};
use e3_net::{Mode, Network};
use spectrum_dapp::{run_dapp, NativeNet, SensingConfig, StageRecord};
use wasm_host::{Entry, Host, HostConfig, InstanceSpec, InstanceState};

use crate::{BenchArm, BenchError, DAPP_WASM};

/// An extra guest run next to the sandboxed dApp, with no capabilities.
#[derive(Debug, Clone)]
pub struct Companion {
    pub name: String,
    pub wasm: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub arm: BenchArm,
    pub scenario: ScenarioConfig,
    pub transport: Mode,
    /// Collect per-stage timings from the dApp.
    pub instrument: bool,
    pub dapp_id: u32,
    pub threshold_db: f64,
    pub companions: Vec<Companion>,
    pub timeout: Duration,
}

impl SessionOptions {
    pub fn new(arm: BenchArm, scenario: ScenarioConfig) -> Self {
        Self {
            arm,
            scenario,
            transport: Mode::VirtualChannel,
            instrument: false,
            dapp_id: 1,
            threshold_db: 6.0,
            companions: Vec::new(),
            timeout: Duration::from_secs(60),
        }
    }
}

/// How the dApp finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DappEnd {
    Exited(i32),
    Trapped(String),
    /// Still running when the session timed out.
    Unfinished,
}

impl fmt::Display for DappEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exited(c) => write!(f, "exit code {c}"),
            Self::Trapped(m) => write!(f, "trapped: {m}"),
            Self::Unfinished => f.write_str("unfinished"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub arm: BenchArm,
    pub end: DappEnd,
    pub stages: Vec<StageRecord>,
    pub agent: AgentReport,
    /// Final state of each companion, or the reason it never ran.
    pub companions: Vec<(String, Result<InstanceState, String>)>,
    pub wall: Duration,
}

impl SessionRun {
    /// Control frames as received by the agent, ordered by seq.
    pub fn control_frames(&self) -> Vec<&[u8]> {
        let mut c: Vec<_> = self.agent.controls.iter().collect();
        c.sort_by_key(|c| c.seq);
        c.into_iter().map(|c| c.frame.as_slice()).collect()
    }

    /// Blocked PRBs of every control, ordered by seq.
    pub fn blocklists(&self) -> Vec<(u32, Vec<u16>)> {
        let mut out: Vec<_> = self
            .agent
            .controls
            .iter()
            .filter_map(|c| match decode(&c.frame) {
                Ok(E3Message::Control {
                    seq,
                    action: ControlAction::Blocklist(b),
                    ..
                }) => Some((seq, b.blocked().collect())),
                _ => None,
            })
            .collect();
        out.sort_by_key(|(s, _)| *s);
        out
    }

    pub fn ok(&self) -> bool {
        self.end == DappEnd::Exited(0)
    }
}

fn agent_host(mode: Mode) -> &'static str {
    match mode {
        Mode::VirtualChannel => "agent",
        Mode::LoopbackTcp => "127.0.0.1",
    }
}

/// A port nobody listens on right now.
fn free_port(net: &Network) -> Result<u16, BenchError> {
    Ok(net.listen("localhost", 0)?.endpoint().port)
}

pub fn run_session(opts: &SessionOptions) -> Result<SessionRun, BenchError> {
    let net = match opts.transport {
        Mode::VirtualChannel => Network::virtual_channels(),
        Mode::LoopbackTcp => Network::loopback_tcp(),
    };
    let host = agent_host(opts.transport);
    let agent = spawn(
        &net,
        host,
        0,
        opts.scenario.clone(),
        ServeOptions {
            deadline: Some(opts.timeout),
            ..Default::default()
        },
    )?;
    let mut cfg = SensingConfig {
        dapp_id: opts.dapp_id,
        fft_size: opts.scenario.fft_size,
        n_prb: opts.scenario.n_prb,
        threshold_db: opts.threshold_db,
        agent_host: host.to_string(),
        agent_port: agent.endpoint().port,
        period_us: 0,
        instrument: opts.instrument,
        stage_log_port: None,
    };
    let start = Instant::now();
    match opts.arm {
        BenchArm::Native => {
            let dapp_net = net.clone();
            let dapp = thread::spawn(move || run_dapp(&mut NativeNet::new(dapp_net), &cfg));
            let outcome = dapp.join().map_err(|_| std::io::Error::other("dApp thread panicked"))?;
            let report = agent.join()?;
            Ok(SessionRun {
                arm: opts.arm,
                end: DappEnd::Exited(outcome.exit as i32),
                stages: outcome.stages,
                agent: report,
                companions: Vec::new(),
                wall: start.elapsed(),
            })
        }
        BenchArm::Sandbox => {
            let stage_port = if opts.instrument {
                Some(free_port(&net)?)
            } else {
                None
            };
            cfg.stage_log_port = stage_port;
            let mut hostrt = Host::new(net.clone(), HostConfig::default());
            let module = hostrt.load_module(DAPP_WASM)?;
            let mut spec = InstanceSpec::new("spectrum-dapp")
                .allow(host, cfg.agent_port)
                .entry(Entry::Config(cfg.to_env().into_bytes()));
            if let Some(p) = stage_port {
                spec = spec.allow("localhost", p);
            }
            let id = hostrt.spawn(&module, spec)?;

            let mut companions = Vec::new();
            for c in &opts.companions {
                let spawned = hostrt
                    .load_module(&c.wasm)
                    .and_then(|m| hostrt.spawn(&m, InstanceSpec::new(c.name.clone())));
                companions.push((c.name.clone(), spawned.map_err(|e| e.to_string())));
            }

            // Collect the agent report, then the stage log the dApp serves
            // once its stream has ended.
            let collector_net = net.clone();
            let collector = thread::spawn(move || {
                let report = agent.join();
                let mut log = Vec::new();
                if let Some(port) = stage_port {
                    let give_up = Instant::now() + Duration::from_secs(5);
                    while Instant::now() < give_up {
                        match collector_net.connect("localhost", port) {
                            Ok(mut s) => {
                                let _ = s.read_to_end(&mut log);
                                break;
                            }
                            Err(_) => thread::sleep(Duration::from_millis(2)),
                        }
                    }
                }
                (report, log)
            });

            hostrt.run(opts.timeout + Duration::from_secs(5), |_| {});
            let end = match hostrt.state(id) {
                Some(InstanceState::Exited(c)) => DappEnd::Exited(c),
                Some(InstanceState::Trapped(m)) => DappEnd::Trapped(m),
                _ => DappEnd::Unfinished,
            };
            let companions = companions
                .into_iter()
                .map(|(name, r)| {
                    let r = r.map(|cid| hostrt.state(cid).expect("spawned instance"));
                    (name, r)
                })
                .collect();
            drop(hostrt);
            let (report, log) = collector
                .join()
                .map_err(|_| std::io::Error::other("collector thread panicked"))?;
            Ok(SessionRun {
                arm: opts.arm,
                end,
                stages: StageRecord::parse_log(&log),
                agent: report?,
                companions,
                wall: start.elapsed(),
            })
        }
    }
}
