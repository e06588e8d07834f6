use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use bench::footprint::{run_dapp_process, run_footprint};
use bench::isolation::{run_isolation, IsolationScenario};
use bench::latency::{run_latency, LatencyOptions};
use bench::report::Report;
use bench::{seed_override, BenchArm, BenchError};
use clap::{Parser, Subcommand};
use e3_net::Mode;
use spectrum_dapp::SensingConfig;

#[derive(Parser)]
#[command(version, about = "Experiments for the sandboxed dApp host")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two load guests, one turning greedy, then budgets.
    Isolation {
        /// JSON overrides for the scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Control-loop latency per arm.
    Latency {
        #[arg(long, value_delimiter = ',', default_value = "native,sandbox")]
        arms: Vec<BenchArm>,
        #[arg(long, default_value_t = 1000)]
        loops: u32,
        #[arg(long, default_value_t = 5000)]
        period_us: u32,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use loopback TCP instead of in-process channels.
        #[arg(long)]
        tcp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// CPU time and peak RSS of each arm as a separate process.
    Footprint {
        #[arg(long, value_delimiter = ',', default_value = "native,sandbox")]
        arms: Vec<BenchArm>,
        #[arg(long, default_value_t = 5.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 5000)]
        period_us: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise an output directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run a single dApp against an agent over TCP (used by `footprint`).
    #[command(hide = true)]
    Dapp {
        #[arg(long)]
        arm: BenchArm,
        #[arg(long, default_value = "127.0.0.1")]
        agent_host: String,
        #[arg(long)]
        agent_port: u16,
        #[arg(long, default_value_t = 1)]
        dapp_id: u32,
    },
}

fn finish(report: Report, dir: &std::path::Path) -> Result<bool, BenchError> {
    report.write_plot_data(dir)?;
    print!("{}", report.render());
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool, BenchError> {
    match cli.cmd {
        Cmd::Isolation { scenario, out } => {
            let scn = match scenario {
                Some(p) => IsolationScenario::load(&p)?,
                None => IsolationScenario::default(),
            };
            let run = run_isolation(&scn, Some(&out))?;
            println!(
                "capacity {} fuel/window, {} fuel/iteration, {:.1} ms stall compensation",
                run.capacity, run.fuel_per_iteration, run.stalled_ms
            );
            finish(Report::load(&out)?, &out)
        }
        Cmd::Latency {
            arms,
            loops,
            period_us,
            repeats,
            seed,
            tcp,
            out,
        } => {
            let opts = LatencyOptions {
                arms,
                loops,
                period_us,
                seed: seed_override().unwrap_or(seed),
                transport: if tcp { Mode::LoopbackTcp } else { Mode::VirtualChannel },
                repeats,
            };
            run_latency(&opts, Some(&out))?;
            finish(Report::load(&out)?, &out)
        }
        Cmd::Footprint {
            arms,
            duration_s,
            period_us,
            seed,
            out,
        } => {
            let exe = std::env::current_exe()?;
            run_footprint(
                &exe,
                &arms,
                Duration::from_secs_f64(duration_s),
                period_us,
                seed_override().unwrap_or(seed),
                Some(&out),
            )?;
            finish(Report::load(&out)?, &out)
        }
        Cmd::Report { input } => finish(Report::load(&input)?, &input),
        Cmd::Dapp {
            arm,
            agent_host,
            agent_port,
            dapp_id,
        } => {
            let cfg = SensingConfig {
                dapp_id,
                agent_host,
                agent_port,
                ..SensingConfig::default()
            };
            let code = run_dapp_process(arm, &cfg)?;
            std::process::exit(code);
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("bench: {e}");
            ExitCode::from(2)
        }
    }
}
