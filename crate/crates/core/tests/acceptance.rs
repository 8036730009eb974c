//! Acceptance suite: one line per criterion, then the metrics behind it.

use std::path::Path;
use std::process::Command;

use halfsphere::validate::{self, Check};

const FLOW_CONFIG: &str = r#"{
  "k": "1 + 0.05*x2 + 4*exp(20*(0.6*x1 + 0.8*x5 - 1)) + 4*exp(20*(-0.6*x1 + 0.8*x5 - 1))",
  "search": {"interior_starts": 400, "boundary_starts": 100, "extra_starts": [[0.6, 0, 0, 0, 0.8], [-0.6, 0, 0, 0, 0.8]]},
  "flow": {"batch": {"count": 8, "spread": 0.3}}
}"#;

fn run_binary(args: &[&str], out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_halfsphere"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    status.status.code().unwrap_or(-1)
}

/// Two binary runs of `criterion` and `flow` with the same config and seed.
fn binary_determinism() -> Check {
    let start = std::time::Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let config = dir.path().join("flow.json");
    std::fs::write(&config, FLOW_CONFIG).expect("write config");
    let config = config.to_str().expect("utf-8 path");
    let mut identical = true;
    let mut codes = Vec::new();
    for (args, file) in [
        (vec!["criterion", "--k", "2 + x5^2", "--seed", "7"], "criterion.json"),
        (vec!["flow", "--config", config, "--seed", "7"], "flow_batch.json"),
    ] {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{}-{run}", args[0]));
            codes.push(run_binary(&args, &out));
            bytes.push(std::fs::read(out.join(file)).unwrap_or_default());
        }
        identical &= !bytes[0].is_empty() && bytes[0] == bytes[1];
    }
    let seconds = start.elapsed().as_secs_f64();
    let metrics = vec![
        validate::Metric::new(
            "runs producing different bytes",
            if identical { 0.0 } else { 1.0 },
            validate::Bound::Equal,
            0.0,
        ),
        validate::Metric::new(
            "runs with exit code other than 0 or 2",
            codes.iter().filter(|c| **c != 0 && **c != 2).count() as f64,
            validate::Bound::Equal,
            0.0,
        ),
        validate::Metric::new("seconds", seconds, validate::Bound::Below, 60.0),
    ];
    let pass = metrics.iter().all(|m| m.pass);
    Check { id: 9, name: "determinism of the binary".into(), metrics, pass, seconds, error: None }
}

#[test]
fn acceptance() {
    let mut checks = validate::run_all();
    checks.push(binary_determinism());
    println!();
    for c in &checks {
        println!("criterion {}: {} {} ({:.2} s)", c.id, if c.pass { "PASS" } else { "FAIL" }, c.name, c.seconds);
    }
    println!();
    print!("{}", validate::table(&checks));
    let failed: Vec<_> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
