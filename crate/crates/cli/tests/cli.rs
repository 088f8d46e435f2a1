//! Exit-code and diagnostics contract of the command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trajopt"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Write a variant of the bundled swing-up config with one substitution.
fn variant(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(example("pendulum_swingup.cfg")).unwrap();
    let path = dir.join("variant.cfg");
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

#[test]
fn zero_steps_config_fails_validation_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "T = 40", "T = 0");
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists(), "no outputs may be written");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("configuration error"), "stderr: {stderr}");
}

#[test]
fn unknown_system_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "\"pendulum\"", "\"cartpole\"");
    let out = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_toml_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.cfg");
    fs::write(&path, "[system\nname = pendulum\n").unwrap();
    let out = run(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = run(&["run", "/nonexistent/path.cfg"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_passes_on_bundled_configs() {
    for cfg in ["lq.cfg", "pendulum_swingup.cfg"] {
        let out = run(&["check", example(cfg).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{cfg}");
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(!stdout.contains("FAIL"), "{cfg}: {stdout}");
    }
}

#[test]
fn check_flags_corrupted_jacobian_and_names_the_block() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "\"pendulum\"", "\"corrupted_pendulum\"");
    let out = run(&["check", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("FAIL") && stdout.contains("block A"),
        "stdout: {stdout}"
    );
}

#[test]
fn check_skips_hessian_for_first_order_systems() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "\"pendulum\"", "\"pendulum_first_order\"");
    let out = run(&["check", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "skip is not a failure");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("SKIP") && stdout.contains("second derivatives"),
        "stdout: {stdout}"
    );
}

#[test]
fn non_convergence_exits_four_but_still_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(dir.path(), "max_iters = 500", "max_iters = 2");
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(out_dir.join("report.csv").exists());
    assert!(out_dir.join("trajectory.csv").exists());
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("termination: maximum iterations reached"));
}

#[test]
fn hessian_override_is_recorded_in_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "run",
        example("lq.cfg").to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--hessian",
        "full",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("hessian mode: full"), "{summary}");
}
