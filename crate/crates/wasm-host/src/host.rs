//! Module loading, instances and the window scheduler.
//!
//! One scheduler thread drives every instance, so instances compete for a
//! single execution resource the way co-located dApps compete for a core.
//! Time is cut into fixed windows. Within a window, runnable instances are
//! advanced round-robin in fuel slices; an instance whose budget for the
//! window is spent is suspended until the next boundary. Host calls that
//! would block park the instance instead of the thread, and it is resumed
//! once the network signals progress.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use e3_net::{Endpoint, Network, Notifier};
use spectrum_dapp::Errno;
use wasmi::errors::HostError as EngineHostError;
use wasmi::{
    Caller, CompilationMode, Config, Engine, Extern, ExternType, Func, FuncType, Linker, Memory, Module,
    ResumableCall, ResumableCallHostTrap, ResumableCallOutOfFuel, Store, StoreLimits,
    StoreLimitsBuilder, Val, ValType,
};

use crate::manifest::{GasBudget, Manifest};
use crate::sockets::{Capabilities, Outcome, Pending, SocketTable};
use crate::usage::WindowUsage;
use crate::HostError;

pub const DEFAULT_WINDOW_US: u64 = 10_000;
/// Permitted per-window overshoot of a budget, in fuel units.
pub const EPSILON_FUEL: u64 = 10_000;

/// Full slices a window needs before it updates the execution rate.
const RATE_MIN_SLICES: u64 = 10;
/// Most a window can be extended by stall compensation, in windows.
const MAX_STALL_WINDOWS: u32 = 10;
/// Weight of the newest window in the execution-rate average.
const RATE_SMOOTHING: f64 = 0.5;

/// Import namespace of the host functions.
pub const IMPORT_MODULE: &str = "e3";

const I32: ValType = ValType::I32;

/// Every function a guest may import, with its signature.
pub const HOST_FUNCTIONS: [(&str, &[ValType], &[ValType]); 7] = [
    ("sock_connect", &[I32, I32, I32], &[I32]),
    ("sock_bind", &[I32], &[I32]),
    ("sock_accept", &[I32], &[I32]),
    ("sock_read", &[I32, I32, I32], &[I32]),
    ("sock_write", &[I32, I32, I32], &[I32]),
    ("sock_close", &[I32], &[I32]),
    ("clock_us", &[], &[ValType::I64]),
];

/// Fuel allowed for instantiation and for the `alloc` export during spawn.
const SETUP_FUEL: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceId(pub u32);

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstanceState {
    Running,
    /// Budget for the current window is spent.
    Suspended,
    Trapped(String),
    Exited(i32),
}

impl InstanceState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Self::Trapped(_) | Self::Exited(_))
    }
}

#[derive(Debug, Clone)]
pub struct HostConfig {
    pub window_us: u64,
    /// Fuel per scheduling slice.
    pub quantum_fuel: u64,
    pub max_instances: usize,
    /// Linear memory cap per instance.
    pub memory_limit: usize,
    /// Stall compensation. When set and an execution rate has been
    /// measured, the part of a slice's wall time that exceeds what its fuel
    /// accounts for by more than this many microseconds is taken as time the
    /// host was descheduled, and the current window is extended by it (at
    /// most ten window lengths).
    pub stall_threshold_us: Option<u64>,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            window_us: DEFAULT_WINDOW_US,
            quantum_fuel: 10_000,
            max_instances: 16,
            memory_limit: 64 << 20,
            stall_threshold_us: None,
        }
    }
}

/// How the guest's `run` export is called.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    /// `run(i32 x n)`.
    Args(usize),
    /// `alloc(len) -> ptr` then `run(ptr, len)` with a configuration blob.
    Config,
}

/// Arguments for the guest entry point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Args(Vec<i32>),
    Config(Vec<u8>),
}

impl Default for Entry {
    fn default() -> Self {
        Self::Args(Vec::new())
    }
}

/// A validated module, ready to instantiate any number of times.
#[derive(Debug, Clone)]
pub struct ModuleHandle {
    module: Module,
    imports: Vec<String>,
    entry: EntryKind,
    returns_code: bool,
}

impl ModuleHandle {
    /// Host functions the module imports, in declaration order.
    pub fn imports(&self) -> &[String] {
        &self.imports
    }

    pub fn entry_kind(&self) -> EntryKind {
        self.entry
    }
}

#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub name: String,
    pub allowed_endpoints: Vec<Endpoint>,
    pub budget: GasBudget,
    pub entry: Entry,
}

impl InstanceSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            allowed_endpoints: Vec::new(),
            budget: GasBudget::Unlimited,
            entry: Entry::default(),
        }
    }

    pub fn allow(mut self, host: &str, port: u16) -> Self {
        self.allowed_endpoints.push(Endpoint::new(host, port));
        self
    }

    pub fn budget(mut self, budget: GasBudget) -> Self {
        self.budget = budget;
        self
    }

    pub fn entry(mut self, entry: Entry) -> Self {
        self.entry = entry;
        self
    }
}

/// Per-store state visible to host functions.
struct HostState {
    sockets: SocketTable,
    epoch: Instant,
    limits: StoreLimits,
}

#[derive(Debug)]
struct WouldBlock(Pending);

impl fmt::Display for WouldBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "host call would block: {:?}", self.0)
    }
}

impl EngineHostError for WouldBlock {}

enum Exec {
    Start(Vec<Val>),
    OutOfFuel { call: ResumableCallOutOfFuel, need: u64 },
    Blocked { call: ResumableCallHostTrap, pending: Pending },
    Ready { call: ResumableCallHostTrap, value: i32 },
    Done,
}

struct Slot {
    id: InstanceId,
    name: String,
    store: Store<HostState>,
    memory: Option<Memory>,
    run: Func,
    returns_code: bool,
    exec: Exec,
    state: InstanceState,
    budget: GasBudget,
    /// Fuel used in the open window.
    used: u64,
    suspended: bool,
    total_fuel: u64,
    /// First window this instance takes part in.
    first_window: u64,
    /// Set once the instance's final window has been recorded.
    retired: bool,
}

impl Slot {
    fn runnable(&self) -> bool {
        self.state == InstanceState::Running
            && matches!(
                self.exec,
                Exec::Start(_) | Exec::OutOfFuel { .. } | Exec::Ready { .. }
            )
    }

    fn finish(&mut self, state: InstanceState) {
        self.state = state;
        self.exec = Exec::Done;
        self.store.data_mut().sockets.close_all();
    }
}

/// Budget changes and other control available at each window boundary.
pub struct WindowCtl<'a> {
    host: &'a mut Host,
    index: u64,
    elapsed: Duration,
    stop: bool,
}

impl WindowCtl<'_> {
    /// Index of the window about to run.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Time since the start of this `run` call.
    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    pub fn capacity(&self) -> Option<u64> {
        self.host.capacity
    }

    /// See [`Host::fuel_rate`].
    pub fn fuel_rate(&self) -> Option<f64> {
        self.host.fuel_rate
    }

    pub fn set_budget(&mut self, id: InstanceId, budget: GasBudget) -> Result<(), HostError> {
        self.host.set_budget(id, budget)
    }

    pub fn state(&self, id: InstanceId) -> Option<InstanceState> {
        self.host.state(id)
    }

    /// Ends the run before this window executes.
    pub fn stop(&mut self) {
        self.stop = true;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunReport {
    pub windows: u64,
    /// Every instance reached Exited or Trapped.
    pub all_terminated: bool,
    /// Total window extension from stall compensation.
    pub stalled: Duration,
}

pub struct Host {
    engine: Engine,
    linker: Linker<HostState>,
    net: Network,
    notifier: Arc<Notifier>,
    cfg: HostConfig,
    slots: Vec<Slot>,
    usage: Vec<WindowUsage>,
    window_index: u64,
    capacity: Option<u64>,
    /// Fuel per second of guest execution, smoothed across windows.
    fuel_rate: Option<f64>,
    /// Compute slices of the current window: fuel and time.
    rate_sample: (u64, Duration),
    epoch: Instant,
    window_started: Instant,
    cursor: usize,
    next_id: u32,
}

impl Host {
    pub fn new(net: Network, cfg: HostConfig) -> Self {
        let mut config = Config::default();
        config.consume_fuel(true);
        // Lazy translation charges fuel on first call and fails outright
        // when the slice is too small for it.
        config.compilation_mode(CompilationMode::Eager);
        let engine = Engine::new(&config);
        let linker = build_linker(&engine);
        Self {
            engine,
            linker,
            net,
            notifier: Notifier::new(),
            cfg,
            slots: Vec::new(),
            usage: Vec::new(),
            window_index: 0,
            capacity: None,
            fuel_rate: None,
            rate_sample: (0, Duration::ZERO),
            epoch: Instant::now(),
            window_started: Instant::now(),
            cursor: 0,
            next_id: 0,
        }
    }

    pub fn config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn capacity(&self) -> Option<u64> {
        self.capacity
    }

    /// Execution speed in fuel per second, measured over full scheduling
    /// slices that were not stalled and smoothed across windows. `None` until
    /// a window with enough compute has run.
    pub fn fuel_rate(&self) -> Option<f64> {
        self.fuel_rate
    }

    /// Overrides the calibrated capacity (fuel per window).
    pub fn set_capacity(&mut self, capacity: u64) {
        self.capacity = Some(capacity);
    }

    /// Validates bytecode and checks every import against the whitelist.
    pub fn load_module(&self, bytes: &[u8]) -> Result<ModuleHandle, HostError> {
        let module =
            Module::new(&self.engine, bytes).map_err(|e| HostError::InvalidBytecode(e.to_string()))?;
        let mut imports = Vec::new();
        for imp in module.imports() {
            let allowed = HOST_FUNCTIONS
                .iter()
                .find(|(name, _, _)| imp.module() == IMPORT_MODULE && *name == imp.name());
            let forbidden = || HostError::ForbiddenImport {
                module: imp.module().to_string(),
                name: imp.name().to_string(),
            };
            let (name, params, results) = allowed.ok_or_else(forbidden)?;
            match imp.ty() {
                ExternType::Func(ty) if ty.params() == *params && ty.results() == *results => {
                    imports.push(name.to_string())
                }
                ExternType::Func(_) => {
                    return Err(HostError::InvalidBytecode(format!(
                        "import {IMPORT_MODULE}.{name} has the wrong signature"
                    )))
                }
                _ => return Err(forbidden()),
            }
        }

        let run_ty = match module.get_export("run") {
            Some(ExternType::Func(ty)) => ty,
            _ => return Err(HostError::BadEntry("missing function export `run`".into())),
        };
        if run_ty.params().iter().any(|t| *t != I32) || run_ty.results().len() > 1 {
            return Err(HostError::BadEntry(format!("unsupported `run` signature {run_ty:?}")));
        }
        let returns_code = match run_ty.results() {
            [] => false,
            [I32] => true,
            _ => return Err(HostError::BadEntry("`run` must return i32 or nothing".into())),
        };
        let alloc_ok = matches!(
            module.get_export("alloc"),
            Some(ExternType::Func(ty)) if ty == FuncType::new([I32], [I32])
        );
        let entry = if alloc_ok && run_ty.params().len() == 2 {
            EntryKind::Config
        } else {
            EntryKind::Args(run_ty.params().len())
        };
        Ok(ModuleHandle {
            module,
            imports,
            entry,
            returns_code,
        })
    }

    fn live_count(&self) -> usize {
        self.slots.iter().filter(|s| !s.state.is_terminal()).count()
    }

    /// Creates an instance with fresh memory and an empty socket table.
    pub fn spawn(&mut self, handle: &ModuleHandle, spec: InstanceSpec) -> Result<InstanceId, HostError> {
        if self.live_count() >= self.cfg.max_instances {
            return Err(HostError::ResourceExhausted {
                limit: self.cfg.max_instances,
            });
        }
        if self
            .slots
            .iter()
            .any(|s| s.name == spec.name && !s.state.is_terminal())
        {
            return Err(HostError::DuplicateName(spec.name));
        }

        let sockets = SocketTable::new(
            Capabilities::new(spec.allowed_endpoints),
            self.net.clone(),
            self.notifier.clone(),
        );
        let state = HostState {
            sockets,
            epoch: self.epoch,
            limits: StoreLimitsBuilder::new()
                .memory_size(self.cfg.memory_limit)
                .instances(1)
                .build(),
        };
        let mut store = Store::new(&self.engine, state);
        store.limiter(|s| &mut s.limits);
        store.set_fuel(SETUP_FUEL)?;
        let instance = self
            .linker
            .instantiate_and_start(&mut store, &handle.module)
            .map_err(|e| HostError::BadEntry(format!("instantiation failed: {e}")))?;
        let memory = instance.get_memory(&store, "memory");
        let run = instance
            .get_func(&store, "run")
            .ok_or_else(|| HostError::BadEntry("missing `run`".into()))?;

        let args = match (handle.entry, spec.entry) {
            (EntryKind::Args(n), Entry::Args(a)) if a.len() == n => a.into_iter().map(Val::I32).collect(),
            (EntryKind::Config, Entry::Config(blob)) => {
                let (ptr, len) = write_config(&mut store, &instance, memory, &blob)?;
                vec![Val::I32(ptr), Val::I32(len)]
            }
            (kind, entry) => {
                return Err(HostError::BadEntry(format!(
                    "entry {entry:?} does not fit module entry {kind:?}"
                )))
            }
        };

        let id = InstanceId(self.next_id);
        self.next_id += 1;
        self.slots.push(Slot {
            id,
            name: spec.name,
            store,
            memory,
            run,
            returns_code: handle.returns_code,
            exec: Exec::Start(args),
            state: InstanceState::Running,
            budget: spec.budget,
            used: 0,
            suspended: false,
            total_fuel: 0,
            first_window: self.window_index,
            retired: false,
        });
        Ok(id)
    }

    /// Loads the manifest's bytecode and spawns it under the manifest's name,
    /// grant and budget.
    pub fn spawn_manifest(&mut self, manifest: &Manifest, entry: Entry) -> Result<InstanceId, HostError> {
        let handle = self.load_module(&manifest.read_bytecode()?)?;
        let budget = manifest.budget.resolve(self.cfg.window_us, self.capacity)?;
        let spec = InstanceSpec {
            name: manifest.name.clone(),
            allowed_endpoints: manifest.allowed_endpoints.clone(),
            budget,
            entry,
        };
        self.spawn(&handle, spec)
    }

    fn slot(&self, id: InstanceId) -> Option<&Slot> {
        self.slots.iter().find(|s| s.id == id)
    }

    fn slot_mut(&mut self, id: InstanceId) -> Option<&mut Slot> {
        self.slots.iter_mut().find(|s| s.id == id)
    }

    pub fn state(&self, id: InstanceId) -> Option<InstanceState> {
        self.slot(id).map(|s| s.state.clone())
    }

    pub fn name(&self, id: InstanceId) -> Option<&str> {
        self.slot(id).map(|s| s.name.as_str())
    }

    pub fn instances(&self) -> Vec<InstanceId> {
        self.slots.iter().map(|s| s.id).collect()
    }

    pub fn budget(&self, id: InstanceId) -> Option<GasBudget> {
        self.slot(id).map(|s| s.budget)
    }

    /// Takes effect for the rest of the current window.
    pub fn set_budget(&mut self, id: InstanceId, budget: GasBudget) -> Result<(), HostError> {
        let slot = self.slot_mut(id).ok_or(HostError::UnknownInstance(id))?;
        slot.budget = budget;
        Ok(())
    }

    /// Total fuel consumed since spawn.
    pub fn total_fuel(&self, id: InstanceId) -> Option<u64> {
        self.slot(id).map(|s| s.total_fuel)
    }

    /// Copies `len` bytes of an instance's linear memory (for inspection).
    pub fn read_memory(&self, id: InstanceId, ptr: u32, len: u32) -> Option<Vec<u8>> {
        let slot = self.slot(id)?;
        let data = slot.memory?.data(&slot.store);
        let r = crate::sockets::guest_range(data.len(), ptr, len).ok()?;
        Some(data[r].to_vec())
    }

    /// Index of the currently open (not yet recorded) window.
    pub fn current_window(&self) -> u64 {
        self.window_index
    }

    /// Closed-window usage records, oldest first.
    pub fn usage(&self) -> &[WindowUsage] {
        &self.usage
    }

    pub fn write_usage_csv<W: Write>(&self, w: W) -> io::Result<()> {
        crate::usage::write_csv(w, &self.usage)
    }

    /// Usage of `id` in `window`. The open window returns the count so far.
    pub fn instruction_usage(&self, id: InstanceId, window: u64) -> Result<WindowUsage, HostError> {
        let slot = self.slot(id).ok_or(HostError::UnknownInstance(id))?;
        let unknown = HostError::UnknownWindow { instance: id, window };
        if window < self.window_index {
            return self
                .usage
                .iter()
                .find(|u| u.instance == id && u.window_index == window)
                .copied()
                .ok_or(unknown);
        }
        if window == self.window_index && !slot.retired && window >= slot.first_window {
            return Ok(WindowUsage {
                instance: id,
                window_index: window,
                t_ms: (self.window_started - self.epoch).as_secs_f64() * 1000.0,
                instructions_used: slot.used,
                budget: slot.budget.limit(),
                suspended: slot.suspended,
            });
        }
        Err(unknown)
    }

    /// Measures how much fuel a lone busy-loop guest burns per window.
    pub fn calibrate_capacity(&mut self, duration_us: u64) -> Result<u64, HostError> {
        if duration_us == 0 {
            return Err(HostError::CalibrationTooShort);
        }
        let bytes = wat::parse_str(SPIN_WAT).expect("built-in module");
        let module = Module::new(&self.engine, &bytes[..])?;
        let mut store = Store::new(&self.engine, ());
        let instance = Linker::new(&self.engine).instantiate_and_start(&mut store, &module)?;
        let run = instance.get_func(&store, "run").expect("built-in export");

        let quantum = self.cfg.quantum_fuel.max(1);
        let budget = Duration::from_micros(duration_us);
        let start = Instant::now();
        let mut total = 0u64;
        store.set_fuel(quantum)?;
        let mut call = match run.call_resumable(&mut store, &[], &mut [])? {
            ResumableCall::OutOfFuel(c) => c,
            _ => unreachable!("spin loop never returns"),
        };
        total += quantum - store.get_fuel()?;
        while start.elapsed() < budget {
            store.set_fuel(quantum)?;
            call = match call.resume(&mut store, &mut [])? {
                ResumableCall::OutOfFuel(c) => c,
                _ => unreachable!("spin loop never returns"),
            };
            total += quantum - store.get_fuel()?;
        }
        let elapsed_us = start.elapsed().as_secs_f64() * 1e6;
        let capacity = (total as f64 * self.cfg.window_us as f64 / elapsed_us) as u64;
        self.capacity = Some(capacity);
        Ok(capacity)
    }

    /// Runs the scheduler for up to `limit` wall time, or until every
    /// instance has exited or trapped. `on_window` is called at the start of
    /// each window.
    pub fn run<F>(&mut self, limit: Duration, mut on_window: F) -> RunReport
    where
        F: FnMut(&mut WindowCtl<'_>),
    {
        let start = Instant::now();
        let window = Duration::from_micros(self.cfg.window_us);
        let mut windows = 0u64;
        let mut stalled = Duration::ZERO;
        loop {
            if self.slots.iter().all(|s| s.state.is_terminal()) {
                return RunReport {
                    windows,
                    all_terminated: true,
                    stalled,
                };
            }
            let elapsed = start.elapsed();
            if elapsed >= limit {
                break;
            }
            self.open_window();
            let mut ctl = WindowCtl {
                index: self.window_index,
                elapsed,
                stop: false,
                host: self,
            };
            on_window(&mut ctl);
            if ctl.stop {
                break;
            }
            // Windows run back to back from the end of the hook; one that
            // overran is not made up by shortening the next.
            let deadline = Instant::now() + window;
            stalled += self.run_until(deadline, start + limit);
            self.close_window();
            windows += 1;
        }
        RunReport {
            windows,
            all_terminated: self.slots.iter().all(|s| s.state.is_terminal()),
            stalled,
        }
    }

    fn open_window(&mut self) {
        self.window_started = Instant::now();
        for s in &mut self.slots {
            s.used = 0;
            s.suspended = false;
            if s.state == InstanceState::Suspended {
                s.state = InstanceState::Running;
            }
        }
    }

    fn close_window(&mut self) {
        let w = self.window_index;
        let t_ms = (self.window_started - self.epoch).as_secs_f64() * 1000.0;
        for s in &mut self.slots {
            if s.retired || s.first_window > w {
                continue;
            }
            self.usage.push(WindowUsage {
                instance: s.id,
                window_index: w,
                t_ms,
                instructions_used: s.used,
                budget: s.budget.limit(),
                suspended: s.suspended,
            });
            if s.state.is_terminal() {
                s.retired = true;
            }
            s.used = 0;
            s.suspended = false;
        }
        let (fuel, time) = std::mem::take(&mut self.rate_sample);
        if fuel >= RATE_MIN_SLICES * self.cfg.quantum_fuel.max(1) && !time.is_zero() {
            let r = fuel as f64 / time.as_secs_f64();
            self.fuel_rate = Some(match self.fuel_rate {
                Some(old) => old + RATE_SMOOTHING * (r - old),
                None => r,
            });
        }
        self.window_index += 1;
    }

    /// Runs slices until `deadline` (never past `limit`). Returns how far
    /// stall compensation pushed the deadline.
    fn run_until(&mut self, mut deadline: Instant, limit: Instant) -> Duration {
        let window = Duration::from_micros(self.cfg.window_us);
        let quantum = self.cfg.quantum_fuel.max(1);
        let threshold = self.cfg.stall_threshold_us.map(Duration::from_micros);
        let mut extended = Duration::ZERO;
        deadline = deadline.min(limit);
        loop {
            let now = Instant::now();
            if now >= deadline {
                return extended;
            }
            let seen = self.notifier.generation();
            self.poll_blocked();
            match self.next_runnable() {
                Some(i) => {
                    let consumed = self.run_slice(i);
                    // Includes polling and picking the slot.
                    let took = now.elapsed();
                    let excess = match self.fuel_rate {
                        Some(rate) => took.saturating_sub(Duration::from_secs_f64(consumed as f64 / rate)),
                        None => Duration::ZERO,
                    };
                    match threshold {
                        Some(t) if excess > t => {
                            let cap = window * MAX_STALL_WINDOWS;
                            if extended < cap {
                                let add = excess.min(cap - extended);
                                extended += add;
                                deadline = (deadline + add).min(limit);
                            }
                        }
                        // Short slices are dominated by host calls.
                        _ if consumed >= quantum / 2 => {
                            self.rate_sample.0 += consumed;
                            self.rate_sample.1 += took;
                        }
                        _ => {}
                    }
                }
                None => {
                    if self.slots.iter().all(|s| s.state.is_terminal()) {
                        return extended;
                    }
                    self.notifier.wait_since(seen, deadline - now);
                }
            }
        }
    }

    fn poll_blocked(&mut self) {
        for s in &mut self.slots {
            let Exec::Blocked { pending, .. } = &s.exec else {
                continue;
            };
            let pending = *pending;
            let outcome = match s.memory {
                Some(mem) => {
                    let (data, state) = mem.data_and_store_mut(&mut s.store);
                    state.sockets.retry(data, pending)
                }
                None => Outcome::Done(-(Errno::Fault as i32)),
            };
            if let Outcome::Done(value) = outcome {
                let Exec::Blocked { call, .. } = std::mem::replace(&mut s.exec, Exec::Done) else {
                    unreachable!()
                };
                s.exec = Exec::Ready { call, value };
            }
        }
    }

    fn next_runnable(&mut self) -> Option<usize> {
        let n = self.slots.len();
        for k in 0..n {
            let i = (self.cursor + k) % n;
            let s = &mut self.slots[i];
            if !s.runnable() {
                continue;
            }
            let remaining = match s.budget {
                GasBudget::Unlimited => u64::MAX,
                GasBudget::PerWindow(b) => b.saturating_sub(s.used),
            };
            let need = match &s.exec {
                Exec::OutOfFuel { need, .. } => *need,
                _ => 1,
            };
            // The next block may overshoot the budget by less than epsilon.
            if remaining == 0 || need > remaining.saturating_add(EPSILON_FUEL) {
                s.suspended = true;
                s.state = InstanceState::Suspended;
                continue;
            }
            self.cursor = (i + 1) % n;
            return Some(i);
        }
        None
    }

    /// Returns the fuel consumed.
    fn run_slice(&mut self, i: usize) -> u64 {
        let quantum = self.cfg.quantum_fuel.max(1);
        let s = &mut self.slots[i];
        let remaining = match s.budget {
            GasBudget::Unlimited => u64::MAX,
            GasBudget::PerWindow(b) => b.saturating_sub(s.used),
        };
        let need = match &s.exec {
            Exec::OutOfFuel { need, .. } => *need,
            _ => 0,
        };
        let fuel = remaining.min(quantum).max(need);
        if s.store.set_fuel(fuel).is_err() {
            s.finish(InstanceState::Trapped("fuel metering unavailable".into()));
            return 0;
        }
        let mut out = if s.returns_code {
            vec![Val::I32(0)]
        } else {
            Vec::new()
        };
        let result = match std::mem::replace(&mut s.exec, Exec::Done) {
            Exec::Start(args) => s.run.call_resumable(&mut s.store, &args, &mut out),
            Exec::OutOfFuel { call, .. } => call.resume(&mut s.store, &mut out),
            Exec::Ready { call, value } => call.resume(&mut s.store, &[Val::I32(value)], &mut out),
            Exec::Blocked { .. } | Exec::Done => unreachable!("slot was runnable"),
        };
        let consumed = fuel - s.store.get_fuel().unwrap_or(0);
        s.used += consumed;
        s.total_fuel += consumed;
        match result {
            Ok(ResumableCall::Finished) => {
                let code = out.first().and_then(Val::i32).unwrap_or(0);
                s.finish(InstanceState::Exited(code));
            }
            Ok(ResumableCall::OutOfFuel(call)) => {
                let need = call.required_fuel().max(1);
                s.exec = Exec::OutOfFuel { call, need };
            }
            Ok(ResumableCall::HostTrap(call)) => {
                match call.host_error().downcast_ref::<WouldBlock>() {
                    Some(WouldBlock(pending)) => {
                        let pending = *pending;
                        s.exec = Exec::Blocked { call, pending };
                    }
                    None => {
                        let msg = call.host_error().to_string();
                        s.finish(InstanceState::Trapped(msg));
                    }
                }
            }
            Err(e) => {
                log::debug!("instance {} ({}) trapped: {e}", s.id, s.name);
                s.finish(InstanceState::Trapped(e.to_string()));
            }
        }
        consumed
    }
}

/// Busy loop used for calibration; same arithmetic as the synthetic loads.
pub const SPIN_WAT: &str = r#"
(module
  (func (export "run")
    (local $acc i64)
    (loop $spin
      (local.set $acc (i64.add (i64.mul (local.get $acc) (i64.const 6364136223846793005)) (i64.const 1)))
      (br $spin))))
"#;

fn write_config(
    store: &mut Store<HostState>,
    instance: &wasmi::Instance,
    memory: Option<Memory>,
    blob: &[u8],
) -> Result<(i32, i32), HostError> {
    let alloc = instance
        .get_typed_func::<i32, i32>(&*store, "alloc")
        .map_err(|e| HostError::BadEntry(e.to_string()))?;
    let len = i32::try_from(blob.len()).map_err(|_| HostError::BadEntry("config too large".into()))?;
    let ptr = alloc
        .call(&mut *store, len)
        .map_err(|e| HostError::BadEntry(format!("alloc failed: {e}")))?;
    let memory = memory.ok_or_else(|| HostError::BadEntry("no exported memory".into()))?;
    let data = memory.data_mut(&mut *store);
    let r = crate::sockets::guest_range(data.len(), ptr as u32, len as u32)
        .map_err(|_| HostError::BadEntry("alloc returned an out-of-bounds buffer".into()))?;
    data[r].copy_from_slice(blob);
    Ok((ptr, len))
}

fn memory_of(caller: &Caller<'_, HostState>) -> Option<Memory> {
    caller.get_export("memory").and_then(Extern::into_memory)
}

fn fault() -> i32 {
    -(Errno::Fault as i32)
}

fn build_linker(engine: &Engine) -> Linker<HostState> {
    type R = Result<i32, wasmi::Error>;
    let mut l = Linker::<HostState>::new(engine);
    l.func_wrap(
        IMPORT_MODULE,
        "sock_connect",
        |mut c: Caller<'_, HostState>, ptr: i32, len: i32, port: i32| -> R {
            let Some(mem) = memory_of(&c) else {
                return Ok(fault());
            };
            let (data, st) = mem.data_and_store_mut(&mut c);
            Ok(st.sockets.connect(data, ptr as u32, len as u32, port as u32))
        },
    )
    .expect("register sock_connect");
    l.func_wrap(
        IMPORT_MODULE,
        "sock_bind",
        |mut c: Caller<'_, HostState>, port: i32| -> R { Ok(c.data_mut().sockets.bind(port as u32)) },
    )
    .expect("register sock_bind");
    l.func_wrap(
        IMPORT_MODULE,
        "sock_accept",
        |mut c: Caller<'_, HostState>, fd: i32| -> R {
            match c.data_mut().sockets.accept(fd) {
                Outcome::Done(v) => Ok(v),
                Outcome::Block(p) => Err(wasmi::Error::host(WouldBlock(p))),
            }
        },
    )
    .expect("register sock_accept");
    l.func_wrap(
        IMPORT_MODULE,
        "sock_read",
        |mut c: Caller<'_, HostState>, fd: i32, ptr: i32, len: i32| -> R {
            let Some(mem) = memory_of(&c) else {
                return Ok(fault());
            };
            let (data, st) = mem.data_and_store_mut(&mut c);
            match st.sockets.read(data, fd, ptr as u32, len as u32) {
                Outcome::Done(v) => Ok(v),
                Outcome::Block(p) => Err(wasmi::Error::host(WouldBlock(p))),
            }
        },
    )
    .expect("register sock_read");
    l.func_wrap(
        IMPORT_MODULE,
        "sock_write",
        |mut c: Caller<'_, HostState>, fd: i32, ptr: i32, len: i32| -> R {
            let Some(mem) = memory_of(&c) else {
                return Ok(fault());
            };
            let (data, st) = mem.data_and_store_mut(&mut c);
            Ok(st.sockets.write(data, fd, ptr as u32, len as u32))
        },
    )
    .expect("register sock_write");
    l.func_wrap(
        IMPORT_MODULE,
        "sock_close",
        |mut c: Caller<'_, HostState>, fd: i32| -> R { Ok(c.data_mut().sockets.close(fd)) },
    )
    .expect("register sock_close");
    l.func_wrap(
        IMPORT_MODULE,
        "clock_us",
        |c: Caller<'_, HostState>| -> Result<i64, wasmi::Error> {
            Ok(c.data().epoch.elapsed().as_micros() as i64)
        },
    )
    .expect("register clock_us");
    l
}
