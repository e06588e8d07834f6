//! Compiles `dapp-guest` for wasm32-wasip1 so the bench can embed it.
//!
//! Set `BENCH_DAPP_WASM` to a prebuilt module to skip the nested build.

use std::env;
use std::path::{Path, PathBuf};
use std::process::Command;

const TARGET: &str = "wasm32-wasip1";

fn main() {
    println!("cargo:rerun-if-env-changed=BENCH_DAPP_WASM");
    let out = PathBuf::from(env::var_os("OUT_DIR").expect("OUT_DIR"));
    let dest = out.join("dapp_guest.wasm");

    if let Some(prebuilt) = env::var_os("BENCH_DAPP_WASM") {
        let prebuilt = PathBuf::from(prebuilt);
        println!("cargo:rerun-if-changed={}", prebuilt.display());
        std::fs::copy(&prebuilt, &dest).expect("copy BENCH_DAPP_WASM");
        return;
    }

    let manifest_dir = PathBuf::from(env::var_os("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let crates = manifest_dir.parent().expect("crates dir");
    for dep in ["dapp-guest", "spectrum-dapp", "e3-codec"] {
        for sub in ["src", "Cargo.toml"] {
            println!("cargo:rerun-if-changed={}", crates.join(dep).join(sub).display());
        }
    }
    let workspace = crates.parent().expect("workspace root");
    // A separate target dir: the outer build holds the lock on the main one.
    let target_dir = out.join("guest-target");
    let cargo = env::var_os("CARGO").unwrap_or_else(|| "cargo".into());
    let mut cmd = Command::new(cargo);
    cmd.current_dir(workspace)
        .args(["build", "--release", "-p", "dapp-guest", "--target", TARGET])
        .arg("--target-dir")
        .arg(&target_dir);
    for (key, _) in env::vars_os() {
        let key = key.to_string_lossy().into_owned();
        let leaks = key.starts_with("CARGO_ENCODED_RUSTFLAGS")
            || key == "RUSTFLAGS"
            || key == "CARGO_TARGET_DIR"
            || key == "CARGO_BUILD_TARGET"
            || key.starts_with("CARGO_PROFILE_")
            || key == "CARGO_MAKEFLAGS"
            || key == "RUSTC_WRAPPER"
            || key == "RUSTC_WORKSPACE_WRAPPER";
        if leaks {
            cmd.env_remove(&key);
        }
    }
    let status = cmd.status().expect("spawn cargo for the guest build");
    assert!(
        status.success(),
        "building dapp-guest for {TARGET} failed; install the target with \
         `rustup target add {TARGET}` or point BENCH_DAPP_WASM at a prebuilt module"
    );
    let built = target_dir.join(TARGET).join("release").join("dapp_guest.wasm");
    copy(&built, &dest);
}

fn copy(from: &Path, to: &Path) {
    std::fs::copy(from, to).unwrap_or_else(|e| panic!("copy {}: {e}", from.display()));
}
