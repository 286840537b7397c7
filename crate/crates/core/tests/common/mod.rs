#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn dann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dann"))
        .args(args)
        .output()
        .expect("failed to launch the dann binary")
}

pub fn path(p: &Path) -> &str {
    p.to_str().expect("temp paths are UTF-8")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

#[track_caller]
pub fn ok(out: Output) -> Output {
    assert_eq!(
        code(&out),
        0,
        "stdout:\n{}\nstderr:\n{}",
        stdout(&out),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Writes `text` as a config file inside `dir` and returns its path.
pub fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    path(&p).to_owned()
}

/// A corpus and schedule small enough for a few seconds of training.
pub const SMALL: &str = "\
preset = desk
source_train = 16
target_train = 16
source_eval = 12
target_eval = 12
total_steps = 40
log_every = 5
";
