mod common;

use common::*;
use wasm_host::{Entry, EntryKind, HostConfig, HostError, InstanceSpec};

#[test]
fn zero_bytes_is_invalid() {
    let h = host(10_000);
    assert!(matches!(h.load_module(&[]), Err(HostError::InvalidBytecode(_))));
    assert!(matches!(
        h.load_module(b"\0asm\x01\0\0\0garbage"),
        Err(HostError::InvalidBytecode(_))
    ));
}

#[test]
fn forbidden_import_is_named() {
    let h = host(10_000);
    match h.load_module(&wasm(FORBIDDEN)) {
        Err(HostError::ForbiddenImport { module, name }) => {
            assert_eq!((module.as_str(), name.as_str()), ("e3", "proc_spawn"))
        }
        other => panic!("expected ForbiddenImport, got {other:?}"),
    }
    let wasi = r#"(module
      (import "wasi_snapshot_preview1" "fd_write" (func (param i32 i32 i32 i32) (result i32)))
      (func (export "run") (result i32) (i32.const 0)))"#;
    assert!(matches!(
        h.load_module(&wasm(wasi)),
        Err(HostError::ForbiddenImport { name, .. }) if name == "fd_write"
    ));
    let memory_import = r#"(module (import "e3" "memory" (memory 1)) (func (export "run")))"#;
    assert!(matches!(
        h.load_module(&wasm(memory_import)),
        Err(HostError::ForbiddenImport { .. })
    ));
}

#[test]
fn wrong_signature_is_invalid() {
    let h = host(10_000);
    let m = r#"(module
      (import "e3" "sock_close" (func (param i64) (result i32)))
      (func (export "run")))"#;
    assert!(matches!(h.load_module(&wasm(m)), Err(HostError::InvalidBytecode(_))));
}

#[test]
fn resolves_socket_imports() {
    let h = host(10_000);
    let m = format!(
        r#"(module {IMPORTS} (memory (export "memory") 1) (func (export "run") (result i32) (i32.const 0)))"#
    );
    let handle = h.load_module(&wasm(&m)).unwrap();
    assert_eq!(
        handle.imports(),
        ["sock_connect", "sock_bind", "sock_accept", "sock_read", "sock_write", "sock_close"]
    );
}

#[test]
fn entry_points() {
    let mut h = host(10_000);
    let no_run = r#"(module (func (export "start")))"#;
    assert!(matches!(h.load_module(&wasm(no_run)), Err(HostError::BadEntry(_))));

    let sum = r#"(module
      (memory (export "memory") 1)
      (global $top (mut i32) (i32.const 1024))
      (func (export "alloc") (param $n i32) (result i32)
        (local $p i32)
        (local.set $p (global.get $top))
        (global.set $top (i32.add (global.get $top) (local.get $n)))
        (local.get $p))
      (func (export "run") (param $p i32) (param $n i32) (result i32)
        (local $s i32)
        (block $d (loop $l
          (br_if $d (i32.eqz (local.get $n)))
          (local.set $s (i32.add (local.get $s) (i32.load8_u (local.get $p))))
          (local.set $p (i32.add (local.get $p) (i32.const 1)))
          (local.set $n (i32.sub (local.get $n) (i32.const 1)))
          (br $l)))
        (local.get $s)))"#;
    let handle = h.load_module(&wasm(sum)).unwrap();
    assert_eq!(handle.entry_kind(), EntryKind::Config);
    let id = h
        .spawn(&handle, InstanceSpec::new("sum").entry(Entry::Config(vec![1, 2, 3, 250])))
        .unwrap();
    assert!(matches!(
        h.spawn(&handle, InstanceSpec::new("bad").entry(Entry::Args(vec![1]))),
        Err(HostError::BadEntry(_))
    ));
    h.run(std::time::Duration::from_secs(5), |_| {});
    assert_eq!(h.state(id), Some(wasm_host::InstanceState::Exited(256)));
}

#[test]
fn instance_limit() {
    let mut h = wasm_host::Host::new(
        e3_net::Network::virtual_channels(),
        HostConfig {
            max_instances: 2,
            ..HostConfig::default()
        },
    );
    let m = load(&h, BUSY);
    h.spawn(&m, InstanceSpec::new("a")).unwrap();
    assert!(matches!(
        h.spawn(&m, InstanceSpec::new("a")),
        Err(HostError::DuplicateName(_))
    ));
    h.spawn(&m, InstanceSpec::new("b")).unwrap();
    assert!(matches!(
        h.spawn(&m, InstanceSpec::new("c")),
        Err(HostError::ResourceExhausted { limit: 2 })
    ));
}

#[test]
fn default_limit_is_sixteen() {
    let mut h = host(10_000);
    let m = load(&h, BUSY);
    for i in 0..16 {
        h.spawn(&m, InstanceSpec::new(format!("i{i}"))).unwrap();
    }
    assert!(matches!(
        h.spawn(&m, InstanceSpec::new("x")),
        Err(HostError::ResourceExhausted { limit: 16 })
    ));
}
