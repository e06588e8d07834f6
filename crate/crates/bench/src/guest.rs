//! Embedded guest modules.

/// The sensing dApp compiled for wasm32-wasip1.
pub static DAPP_WASM: &[u8] = include_bytes!(concat!(env!("OUT_DIR"), "/dapp_guest.wasm"));

/// Synthetic load: `run(port)` connects to `driver:port`, then repeatedly
/// reads a little-endian u64 iteration count and spins for that many
/// iterations. Returns 0 at end of stream.
pub const LOAD_WAT: &str = r#"
(module
  (import "e3" "sock_connect" (func $connect (param i32 i32 i32) (result i32)))
  (import "e3" "sock_read" (func $read (param i32 i32 i32) (result i32)))
  (memory (export "memory") 1)
  (data (i32.const 0) "driver")
  (global $sink (mut i64) (i64.const 0))
  (func (export "run") (param $port i32) (result i32)
    (local $fd i32) (local $off i32) (local $r i32) (local $n i64) (local $acc i64)
    (local.set $fd (call $connect (i32.const 0) (i32.const 6) (local.get $port)))
    (if (i32.lt_s (local.get $fd) (i32.const 0)) (then (return (local.get $fd))))
    (loop $next
      (local.set $off (i32.const 0))
      (block $full
        (loop $fill
          (br_if $full (i32.ge_u (local.get $off) (i32.const 8)))
          (local.set $r (call $read (local.get $fd)
                                    (i32.add (i32.const 64) (local.get $off))
                                    (i32.sub (i32.const 8) (local.get $off))))
          (if (i32.le_s (local.get $r) (i32.const 0)) (then (return (i32.const 0))))
          (local.set $off (i32.add (local.get $off) (local.get $r)))
          (br $fill)))
      (local.set $n (i64.load (i32.const 64)))
      (block $done
        (loop $spin
          (br_if $done (i64.eqz (local.get $n)))
          (local.set $acc (i64.add (i64.mul (local.get $acc) (i64.const 6364136223846793005))
                                   (i64.const 1442695040888963407)))
          (local.set $n (i64.sub (local.get $n) (i64.const 1)))
          (br $spin)))
      (global.set $sink (local.get $acc))
      (br $next))
    (i32.const 0)))
"#;

/// Name of the host the load guests connect to.
pub const DRIVER_HOST: &str = "driver";
