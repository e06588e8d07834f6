#![allow(dead_code)]

use e3_net::Network;
use wasm_host::{Host, HostConfig, ModuleHandle};

pub const IMPORTS: &str = r#"
  (import "e3" "sock_connect" (func $connect (param i32 i32 i32) (result i32)))
  (import "e3" "sock_bind" (func $bind (param i32) (result i32)))
  (import "e3" "sock_accept" (func $accept (param i32) (result i32)))
  (import "e3" "sock_read" (func $read (param i32 i32 i32) (result i32)))
  (import "e3" "sock_write" (func $write (param i32 i32 i32) (result i32)))
  (import "e3" "sock_close" (func $close (param i32) (result i32)))
"#;

/// Spins forever.
pub const BUSY: &str = r#"
(module
  (memory (export "memory") 1)
  (func (export "run") (result i32)
    (local $acc i64)
    (loop $l
      (local.set $acc (i64.add (i64.mul (local.get $acc) (i64.const 6364136223846793005)) (i64.const 1)))
      (br $l))
    (i32.const 0)))
"#;

/// `run(n)`: LCG over `n` iterations, returns the low 32 bits.
pub const CHECKSUM: &str = r#"
(module
  (func (export "run") (param $n i32) (result i32)
    (local $acc i64)
    (local.set $acc (i64.const 1))
    (block $done
      (loop $l
        (br_if $done (i32.eqz (local.get $n)))
        (local.set $acc (i64.add (i64.mul (local.get $acc) (i64.const 6364136223846793005))
                                 (i64.const 1442695040888963407)))
        (local.set $acc (i64.xor (local.get $acc) (i64.shr_u (local.get $acc) (i64.const 29))))
        (local.set $n (i32.sub (local.get $n) (i32.const 1)))
        (br $l)))
    (i32.wrap_i64 (local.get $acc))))
"#;

/// Out-of-bounds store on a one-page memory.
pub const TRAP_OOB: &str = r#"
(module
  (memory (export "memory") 1)
  (func (export "run") (result i32)
    (i32.store (i32.const 70000) (i32.const 1))
    (i32.const 0)))
"#;

pub const FORBIDDEN: &str = r#"
(module
  (import "e3" "proc_spawn" (func $spawn (param i32) (result i32)))
  (func (export "run") (result i32) (call $spawn (i32.const 0))))
"#;

pub fn wasm(text: &str) -> Vec<u8> {
    wat::parse_str(text).expect("test module parses")
}

pub fn host(window_us: u64) -> Host {
    Host::new(
        Network::virtual_channels(),
        HostConfig {
            window_us,
            ..HostConfig::default()
        },
    )
}

pub fn load(host: &Host, text: &str) -> ModuleHandle {
    host.load_module(&wasm(text)).expect("module loads")
}

/// Naive reference for [`CHECKSUM`].
pub fn checksum(n: u32) -> i32 {
    let mut acc: u64 = 1;
    for _ in 0..n {
        acc = acc
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        acc ^= acc >> 29;
    }
    acc as u32 as i32
}
