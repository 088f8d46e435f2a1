//! Output files: trajectory.csv, report.csv, summary.txt.
//!
//! Floats are written with 17 significant digits so reruns are
//! byte-comparable; per-iteration wall time is zeroed in report.csv unless
//! `[output] timing = true`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use trajopt::optimizer::OptimizationReport;
use trajopt::simulate::{ControlSequence, Trajectory};

/// 17 significant digits, scientific.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_trajectory(
    path: &Path,
    x: &Trajectory,
    u: &ControlSequence,
) -> io::Result<()> {
    let n = x.state(0).len();
    let m = u.control(0).len();
    let mut text = String::from("step");
    for i in 1..=n {
        write!(text, ",x{i}").unwrap();
    }
    for i in 1..=m {
        write!(text, ",u{i}").unwrap();
    }
    text.push('\n');
    for k in 0..x.len() {
        write!(text, "{}", k + 1).unwrap();
        for v in x.state(k).iter() {
            write!(text, ",{}", fmt_f64(*v)).unwrap();
        }
        for v in u.control(k).iter() {
            write!(text, ",{}", fmt_f64(*v)).unwrap();
        }
        text.push('\n');
    }
    fs::write(path, text)
}

pub fn write_report(path: &Path, report: &OptimizationReport, timing: bool) -> io::Result<()> {
    let mut text = String::from("iter,objective,grad_inf_norm,alpha,lambda,millis\n");
    for r in &report.iterations {
        let millis = if timing { r.millis } else { 0 };
        writeln!(
            text,
            "{},{},{},{},{},{}",
            r.iter,
            fmt_f64(r.objective),
            fmt_f64(r.grad_inf_norm),
            fmt_f64(r.alpha),
            fmt_f64(r.lambda),
            millis
        )
        .unwrap();
    }
    fs::write(path, text)
}

pub fn write_summary(
    path: &Path,
    system_name: &str,
    hessian_mode: &str,
    seed: u64,
    report: &OptimizationReport,
) -> io::Result<()> {
    let mut text = String::new();
    writeln!(text, "system: {system_name}").unwrap();
    writeln!(text, "hessian mode: {hessian_mode}").unwrap();
    writeln!(text, "seed: {seed}").unwrap();
    writeln!(text, "termination: {}", report.termination).unwrap();
    writeln!(text, "accepted iterations: {}", report.accepted_iterations()).unwrap();
    writeln!(text, "records: {}", report.iterations.len()).unwrap();
    if let Some(obj) = report.final_objective() {
        writeln!(text, "final objective: {}", fmt_f64(obj)).unwrap();
    }
    if let Some(g) = report.final_grad_norm() {
        writeln!(text, "final gradient inf-norm: {}", fmt_f64(g)).unwrap();
    }
    writeln!(text, "total wall time ms: {}", report.total_millis).unwrap();
    fs::write(path, text)
}
