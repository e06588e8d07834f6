mod common;

use std::time::{Duration, Instant};

use common::*;
use wasm_host::{
    usage, Entry, GasBudget, HostError, InstanceSpec, InstanceState, EPSILON_FUEL,
};

#[test]
fn zero_budget_makes_no_progress() {
    let mut h = host(2_000);
    let m = load(&h, BUSY);
    let id = h
        .spawn(&m, InstanceSpec::new("z").budget(GasBudget::PerWindow(0)))
        .unwrap();
    let r = h.run(Duration::from_millis(40), |_| {});
    assert!(r.windows >= 5);
    let rows: Vec<_> = h.usage().iter().filter(|u| u.instance == id).collect();
    assert_eq!(rows.len() as u64, r.windows);
    assert!(rows.iter().all(|u| u.instructions_used == 0 && u.suspended));
    assert_eq!(h.total_fuel(id), Some(0));
}

#[test]
fn unlimited_is_never_suspended() {
    let mut h = host(2_000);
    let m = load(&h, BUSY);
    let id = h.spawn(&m, InstanceSpec::new("u")).unwrap();
    h.run(Duration::from_millis(40), |_| {});
    let rows: Vec<_> = h.usage().iter().filter(|u| u.instance == id).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|u| !u.suspended && u.budget.is_none()));
    assert!(rows.iter().any(|u| u.instructions_used > 0));
}

#[test]
fn budget_bound_and_suspension() {
    let mut h = host(5_000);
    let m = load(&h, BUSY);
    let budget = 37_777;
    let a = h
        .spawn(&m, InstanceSpec::new("a").budget(GasBudget::PerWindow(budget)))
        .unwrap();
    let b = h
        .spawn(&m, InstanceSpec::new("b").budget(GasBudget::PerWindow(1)))
        .unwrap();
    h.run(Duration::from_millis(200), |_| {});
    assert!(usage::budget_violations(h.usage(), EPSILON_FUEL).is_empty());
    for u in h.usage().iter().filter(|u| u.instance == a) {
        assert!(u.suspended, "{u:?}");
        assert!(
            (budget..=budget + EPSILON_FUEL).contains(&u.instructions_used),
            "{u:?}"
        );
    }
    assert!(h.usage().iter().filter(|u| u.instance == b).all(|u| u.instructions_used <= 1 + EPSILON_FUEL));
    assert!(matches!(h.state(a), Some(InstanceState::Running | InstanceState::Suspended)));
}

#[test]
fn resumed_checksum_matches_unmetered() {
    const N: i32 = 10_000_000;
    let want = checksum(N as u32);

    let mut free = host(10_000);
    let m = load(&free, CHECKSUM);
    let id = free
        .spawn(&m, InstanceSpec::new("free").entry(Entry::Args(vec![N])))
        .unwrap();
    free.run(Duration::from_secs(60), |_| {});
    assert_eq!(free.state(id), Some(InstanceState::Exited(want)));
    let total = free.total_fuel(id).unwrap();

    // Budget-limited windows, enough that the computation is cut many times.
    let mut metered = host(10_000);
    let cap = metered.calibrate_capacity(100_000).unwrap();
    let m = load(&metered, CHECKSUM);
    let per_window = (total / 150 + 1).min(cap / 2);
    let id = metered
        .spawn(
            &m,
            InstanceSpec::new("metered")
                .budget(GasBudget::PerWindow(per_window))
                .entry(Entry::Args(vec![N])),
        )
        .unwrap();
    let r = metered.run(Duration::from_secs(60), |_| {});
    assert!(r.all_terminated);
    assert_eq!(metered.state(id), Some(InstanceState::Exited(want)));
    assert_eq!(metered.total_fuel(id), Some(total));
    let suspended = metered.usage().iter().filter(|u| u.suspended).count();
    assert!(suspended >= 100, "only {suspended} suspensions");
    assert!(usage::budget_violations(metered.usage(), EPSILON_FUEL).is_empty());
}

#[test]
fn trap_is_contained() {
    let mut h = host(2_000);
    let busy = load(&h, BUSY);
    let trap = load(&h, TRAP_OOB);
    let survivor = h
        .spawn(&busy, InstanceSpec::new("busy").budget(GasBudget::PerWindow(50_000)))
        .unwrap();
    let bad = h.spawn(&trap, InstanceSpec::new("trap")).unwrap();
    h.run(Duration::from_millis(50), |_| {});

    assert!(matches!(h.state(bad), Some(InstanceState::Trapped(_))));
    let bad_rows: Vec<_> = h.usage().iter().filter(|u| u.instance == bad).collect();
    assert_eq!(bad_rows.len(), 1, "trapped instance is recorded once");
    let last = bad_rows[0].window_index;
    let after: Vec<_> = h
        .usage()
        .iter()
        .filter(|u| u.instance == survivor && u.window_index > last)
        .collect();
    // The run limit cuts the last window short, and a host stall can cut
    // any other; the survivor must still fill most windows.
    let full = after.iter().filter(|u| u.instructions_used >= 50_000).count();
    assert!(after.len() >= 5 && full * 5 >= after.len() * 4, "{full} of {} windows full", after.len());
}

#[test]
fn unreachable_and_exit_codes() {
    let mut h = host(10_000);
    let m = load(&h, r#"(module (func (export "run") (result i32) unreachable))"#);
    let a = h.spawn(&m, InstanceSpec::new("a")).unwrap();
    let m = load(&h, r#"(module (func (export "run") (result i32) (i32.const 7)))"#);
    let b = h.spawn(&m, InstanceSpec::new("b")).unwrap();
    let m = load(&h, r#"(module (func (export "run")))"#);
    let c = h.spawn(&m, InstanceSpec::new("c")).unwrap();
    assert!(h.run(Duration::from_secs(1), |_| {}).all_terminated);
    assert!(matches!(h.state(a), Some(InstanceState::Trapped(_))));
    assert_eq!(h.state(b), Some(InstanceState::Exited(7)));
    assert_eq!(h.state(c), Some(InstanceState::Exited(0)));
}

#[test]
fn memories_are_private() {
    let poke = r#"(module
      (memory (export "memory") 1)
      (func (export "run") (param $v i32) (result i32)
        (i32.store (i32.const 100) (local.get $v))
        (i32.const 0)))"#;
    let mut h = host(10_000);
    let m = load(&h, poke);
    let a = h
        .spawn(&m, InstanceSpec::new("a").entry(Entry::Args(vec![0x5EB7_1E11])))
        .unwrap();
    let b = h.spawn(&m, InstanceSpec::new("b").entry(Entry::Args(vec![0]))).unwrap();
    h.run(Duration::from_secs(1), |_| {});
    assert_eq!(h.read_memory(a, 100, 4).unwrap(), 0x5EB7_1E11u32.to_le_bytes());
    assert_eq!(h.read_memory(b, 100, 4).unwrap(), [0, 0, 0, 0]);
}

#[test]
fn window_hook_sets_budgets() {
    let mut h = host(2_000);
    let m = load(&h, BUSY);
    let id = h.spawn(&m, InstanceSpec::new("x")).unwrap();
    h.run(Duration::from_millis(60), |ctl| {
        if ctl.index() == 10 {
            ctl.set_budget(id, GasBudget::PerWindow(20_000)).unwrap();
        }
        if ctl.index() == 20 {
            ctl.stop();
        }
    });
    let rows: Vec<_> = h.usage().iter().filter(|u| u.instance == id).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows[..10].iter().all(|u| !u.suspended));
    assert!(rows[10..]
        .iter()
        .all(|u| u.suspended && u.budget == Some(20_000) && u.instructions_used <= 20_000 + EPSILON_FUEL));
}

#[test]
fn instruction_usage_queries() {
    let mut h = host(2_000);
    let m = load(&h, BUSY);
    let id = h
        .spawn(&m, InstanceSpec::new("q").budget(GasBudget::PerWindow(30_000)))
        .unwrap();
    h.run(Duration::from_millis(20), |_| {});
    let closed = h.current_window() - 1;
    let u = h.instruction_usage(id, closed).unwrap();
    assert!(u.suspended && (30_000..=30_000 + EPSILON_FUEL).contains(&u.instructions_used));
    assert!(matches!(
        h.instruction_usage(id, h.current_window() + 1),
        Err(HostError::UnknownWindow { .. })
    ));
    // The open window has had no execution yet.
    assert_eq!(h.instruction_usage(id, h.current_window()).unwrap().instructions_used, 0);
}

#[test]
fn calibration() {
    let mut h = host(10_000);
    assert!(matches!(h.calibrate_capacity(0), Err(HostError::CalibrationTooShort)));
    let t = Instant::now();
    let c1 = h.calibrate_capacity(200_000).unwrap();
    let c2 = h.calibrate_capacity(200_000).unwrap();
    assert!(t.elapsed() < Duration::from_secs(2));
    assert!(c1 > 0 && c2 > 0);
    let diff = (c1 as f64 - c2 as f64).abs() / c1.max(c2) as f64;
    assert!(diff < 0.10, "{c1} vs {c2}");
    assert_eq!(h.capacity(), Some(c2));
    assert_eq!(GasBudget::percent_of(60.0, c2), GasBudget::PerWindow((0.6 * c2 as f64) as u64));
}

#[test]
fn fuel_rate_tracks_execution() {
    let mut h = host(2_000);
    assert_eq!(h.fuel_rate(), None);
    let m = load(&h, BUSY);
    let id = h.spawn(&m, InstanceSpec::new("r")).unwrap();
    h.run(Duration::from_millis(100), |_| {});
    let rate = h.fuel_rate().expect("busy windows measure a rate");
    // Execution time never exceeds wall time, so the rate bounds what any
    // window delivered (with slack for the smoothing).
    let window_s = h.config().window_us as f64 / 1e6;
    let mut per_window: Vec<u64> = h
        .usage()
        .iter()
        .filter(|u| u.instance == id)
        .map(|u| u.instructions_used)
        .collect();
    per_window.sort_unstable();
    let median = per_window[per_window.len() / 2] as f64;
    assert!(rate * window_s > 0.5 * median, "rate {rate} median {median}");
}
