#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use kws_core::frontend::wav::write_wav;
use kws_core::train::synthetic_clip;
use kws_core::Waveform;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

pub fn run_env(args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kws"));
    cmd.args(args).env_remove("KWS_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("kws binary runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn run(args: &[&str]) -> Run {
    run_env(args, &[])
}

/// Same as [`run`] with `--format structured`; asserts success and parses.
pub fn run_json(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "structured"]);
    let r = run(&all);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    r.json()
}

pub fn write(dir: &Path, name: &str, wave: &Waveform) -> PathBuf {
    let path = dir.join(name);
    write_wav(&path, wave).unwrap();
    path
}

/// One second of synthetic class `label` (0 = noise) written to `dir/name`.
pub fn clip(dir: &Path, name: &str, label: usize, seed: u64) -> PathBuf {
    write(dir, name, &synthetic_clip(label, 0.1, seed).unwrap())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
