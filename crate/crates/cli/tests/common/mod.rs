//! Shared fixtures for the CLI integration tests: a three-device benchmark
//! small enough that every subcommand finishes in well under a second.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMALL_CONFIG: &str = r#"
seed = 5

[task]
classes = 3
features = 4
train_samples = 150
test_samples = 60
pretrain_samples = 60
mean_scale = 1.5

[devices]
count = 3
cpu_hz = [2e7, 5e7]
distance_m = [100.0, 140.0]
interference_w = 1.5e-8
bandwidth_hz = 1e4

[constants]
learning_rate = 0.01

[bounds]
aug_factor = [0.1, 0.4]
prune_ratio = [0.1, 0.3]
quant_bits = [6, 16]
tx_power_w = [0.01, 0.1]
target_error_prob = [0.01, 0.3]

[strategy]
target_error_prob = 0.1
aug_factor = 0.3
prune_ratio = 0.2
quant_bits = 8

[experiment]
participants = 2
dirichlet_pi = 1.0
round_cap = 8
target_accuracy = 0.8
stop_at_target = false
calibration_rounds = 2
centralized_iters = 200

[optimizer]
bcd_max_iters = 2
budget_error_prob = 6
budget_aug = 6
budget_prune = 6
budget_bits = 6
"#;

pub fn write_small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL_CONFIG).expect("write config fixture");
    path
}

/// Runs the compiled binary with `dir` as working directory so relative
/// output paths land inside the caller's sandbox.
pub fn run_cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feddpq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run feddpq binary")
}
