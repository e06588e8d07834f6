//! Sandbox host for E3 dApps.
//!
//! Loads WebAssembly modules, grants them a small set of socket host
//! functions scoped by a manifest, and runs them under per-window fuel
//! budgets.
//!
//! ```no_run
//! use std::time::Duration;
//! use e3_net::Network;
//! use wasm_host::{Entry, GasBudget, Host, HostConfig, InstanceSpec};
//!
//! let mut host = Host::new(Network::virtual_channels(), HostConfig::default());
//! let module = host.load_module(&std::fs::read("dapp.wasm")?)?;
//! let id = host.spawn(
//!     &module,
//!     InstanceSpec::new("sensing")
//!         .allow("localhost", 9990)
//!         .budget(GasBudget::PerWindow(2_000_000))
//!         .entry(Entry::Config(b"agent_port=9990\n".to_vec())),
//! )?;
//! host.run(Duration::from_secs(5), |_| {});
//! println!("{:?}", host.state(id));
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

mod error;
mod host;
pub mod manifest;
pub mod sockets;
pub mod usage;

pub use error::HostError;
pub use host::{
    Entry, EntryKind, Host, HostConfig, InstanceId, InstanceSpec, InstanceState, ModuleHandle,
    RunReport, WindowCtl, DEFAULT_WINDOW_US, EPSILON_FUEL, HOST_FUNCTIONS, IMPORT_MODULE, SPIN_WAT,
};
pub use manifest::{BudgetSpec, GasBudget, Manifest};
pub use usage::WindowUsage;
