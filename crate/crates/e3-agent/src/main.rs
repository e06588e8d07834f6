use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use e3_agent::{spawn, write_loop_csv, AgentError, ScenarioConfig, ServeOptions};
use e3_net::Network;

/// Simulated E3 agent over loopback TCP.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Scenario JSON; the built-in two-incumbent scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 9990)]
    port: u16,
    /// dApp connections to serve before exiting.
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    /// Wait for late controls after the last indication, in milliseconds.
    #[arg(long, default_value_t = 500)]
    grace_ms: u64,
    /// Give up after this many seconds.
    #[arg(long)]
    deadline_s: Option<f64>,
    /// Write the per-loop CSV here.
    #[arg(long)]
    loop_log: Option<PathBuf>,
}

fn run(args: Args) -> Result<(), AgentError> {
    let scenario = match &args.scenario {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    let opts = ServeOptions {
        sessions: args.sessions,
        grace: Duration::from_millis(args.grace_ms),
        deadline: args.deadline_s.map(Duration::from_secs_f64),
    };
    let agent = spawn(&Network::loopback_tcp(), &args.host, args.port, scenario, opts)?;
    eprintln!("listening on {}", agent.endpoint());
    let report = agent.join()?;
    eprintln!(
        "sessions={} indications={} loops={} errors={} blocked={:?}{}",
        report.sessions,
        report.indications_sent,
        report.records.len(),
        report.errors_sent,
        report.scheduler.blocked(),
        if report.timed_out { " (deadline hit)" } else { "" },
    );
    if let Some(path) = &args.loop_log {
        write_loop_csv(BufWriter::new(File::create(path)?), &report.records)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("e3-agent: {e}");
            ExitCode::FAILURE
        }
    }
}
