//! The spectrum-sensing dApp compiled for the sandbox.
//!
//! Build with `cargo build --target wasm32-wasip1 --release`. On any other
//! target this crate is empty. The module imports nothing but the socket
//! and clock host functions from the `e3` namespace and exports
//! `alloc(len) -> ptr` and `run(cfg_ptr, cfg_len) -> exit_code`.

#![cfg_attr(target_arch = "wasm32", no_std)]

#[cfg(target_arch = "wasm32")]
mod guest {
    extern crate alloc;

    use alloc::vec::Vec;

    use spectrum_dapp::net::check;
    use spectrum_dapp::{run_dapp, Errno, ExitCode, Fd, Net, SensingConfig};

    #[global_allocator]
    static ALLOC: dlmalloc::GlobalDlmalloc = dlmalloc::GlobalDlmalloc;

    #[panic_handler]
    fn panic(_: &core::panic::PanicInfo) -> ! {
        core::arch::wasm32::unreachable()
    }

    // memcmp/memcpy/memset from the target's bundled libc; they need no
    // host imports.
    #[link(name = "c")]
    extern "C" {}

    #[link(wasm_import_module = "e3")]
    extern "C" {
        fn sock_connect(host_ptr: *const u8, host_len: u32, port: u32) -> i32;
        fn sock_bind(port: u32) -> i32;
        fn sock_accept(fd: i32) -> i32;
        fn sock_read(fd: i32, ptr: *mut u8, len: u32) -> i32;
        fn sock_write(fd: i32, ptr: *const u8, len: u32) -> i32;
        fn sock_close(fd: i32) -> i32;
        fn clock_us() -> i64;
    }

    struct HostNet;

    impl Net for HostNet {
        fn connect(&mut self, host: &str, port: u16) -> Result<Fd, Errno> {
            check(unsafe { sock_connect(host.as_ptr(), host.len() as u32, port.into()) })
        }

        fn bind(&mut self, port: u16) -> Result<Fd, Errno> {
            check(unsafe { sock_bind(port.into()) })
        }

        fn accept(&mut self, fd: Fd) -> Result<Fd, Errno> {
            check(unsafe { sock_accept(fd) })
        }

        fn read(&mut self, fd: Fd, buf: &mut [u8]) -> Result<usize, Errno> {
            check(unsafe { sock_read(fd, buf.as_mut_ptr(), buf.len() as u32) }).map(|n| n as usize)
        }

        fn write(&mut self, fd: Fd, buf: &[u8]) -> Result<usize, Errno> {
            check(unsafe { sock_write(fd, buf.as_ptr(), buf.len() as u32) }).map(|n| n as usize)
        }

        fn close(&mut self, fd: Fd) -> Result<(), Errno> {
            check(unsafe { sock_close(fd) }).map(drop)
        }

        fn clock_us(&mut self) -> u64 {
            unsafe { clock_us() as u64 }
        }
    }

    /// Hands the host a buffer for the configuration text. Ownership passes
    /// to `run`.
    #[no_mangle]
    pub extern "C" fn alloc(len: u32) -> *mut u8 {
        let mut buf = Vec::<u8>::with_capacity(len as usize);
        let ptr = buf.as_mut_ptr();
        core::mem::forget(buf);
        ptr
    }

    #[no_mangle]
    pub extern "C" fn run(cfg_ptr: *mut u8, cfg_len: u32) -> i32 {
        let text = if cfg_len == 0 {
            Vec::new()
        } else {
            unsafe { Vec::from_raw_parts(cfg_ptr, cfg_len as usize, cfg_len as usize) }
        };
        let cfg = match core::str::from_utf8(&text).map(SensingConfig::parse) {
            Ok(Ok(cfg)) => cfg,
            _ => return ExitCode::Config as i32,
        };
        run_dapp(&mut HostNet, &cfg).exit as i32
    }
}
