//! Kept in its own binary so no other test competes for the CPU.

use std::thread;
use std::time::{Duration, Instant};

use e3_agent::{spawn, ScenarioConfig, ServeOptions};
use e3_net::Network;
use spectrum_dapp::{run_dapp, NativeNet, SensingConfig};

const PERIOD_US: u32 = 2_000;
const FRAMES: u64 = 500;

/// 99th percentile of |interval - period| over consecutive send times.
fn p99_deviation(times_us: &[u64]) -> u64 {
    let mut v: Vec<u64> = times_us
        .windows(2)
        .map(|w| (w[1] - w[0]).abs_diff(u64::from(PERIOD_US)))
        .collect();
    v.sort_unstable();
    v[v.len() * 99 / 100]
}

/// The same schedule kept by a bare sleep loop: the jitter this machine's
/// timers impose before the agent adds anything.
fn platform_p99() -> u64 {
    let period = Duration::from_micros(u64::from(PERIOD_US));
    let start = Instant::now();
    let mut due = start;
    let times: Vec<u64> = (0..FRAMES)
        .map(|_| {
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
            let t = Instant::now();
            due = (due + period).max(t);
            t.duration_since(start).as_micros() as u64
        })
        .collect();
    p99_deviation(&times)
}

#[test]
fn indication_jitter_is_bounded() {
    let net = Network::virtual_channels();
    let scenario = ScenarioConfig {
        indication_period_us: PERIOD_US,
        duration_us: FRAMES * u64::from(PERIOD_US),
        seed: 42,
        ..Default::default()
    };
    let opts = ServeOptions {
        deadline: Some(Duration::from_secs(30)),
        ..Default::default()
    };
    let agent = spawn(&net, "agent", 0, scenario, opts).unwrap();
    let cfg = SensingConfig {
        agent_host: "agent".into(),
        agent_port: agent.endpoint().port,
        ..Default::default()
    };
    let dapp = thread::spawn(move || run_dapp(&mut NativeNet::new(net), &cfg));
    dapp.join().unwrap();
    let report = agent.join().unwrap();

    let t = report.send_times(1);
    assert_eq!(t.len() as u64, FRAMES);
    let agent_p99 = p99_deviation(&t);
    let platform = platform_p99();
    assert!(
        agent_p99 < u64::from(PERIOD_US) / 2 + platform,
        "p99 deviation {agent_p99} us, platform sleep p99 overshoot {platform} us"
    );
}
