use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_halfsphere")).args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).expect("report exists")).expect("valid json")
}

#[test]
fn missing_k_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["criterion"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("usage"));
}

#[test]
fn unknown_subcommand_and_config_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["nonsense"], dir.path()).status.code(), Some(1));
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"k": "2", "search": {"starts": 3}}"#).unwrap();
    let o = run(&["critical-points", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));
}

#[test]
fn criterion_report_embeds_config_and_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["criterion", "--k", "2 + x5^2"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    let r = read(&dir.path().join("criterion.json"));
    assert_eq!(r["command"], "criterion");
    assert_eq!(r["config"]["k"], "2 + x5^2");
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    for key in ["thm11_applies", "thm11_concludes", "thm12_concludes", "sum_a", "records", "flagged"] {
        assert!(r["result"].get(key).is_some(), "{key}");
    }
    let inconclusive = !r["result"]["thm11_concludes"].as_bool().unwrap() && !r["result"]["thm12_concludes"].as_bool().unwrap();
    assert_eq!(o.status.code(), Some(if inconclusive { 2 } else { 0 }));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"k": "3", "convention": "flat_model", "search": {"interior_starts": 50, "boundary_starts": 20}}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&["critical-points", "--config", c], &a);
    run(&["critical-points", "--config", c, "--k", "3 + x5", "--convention", "spherical_image", "--seed", "4"], &b);
    let (ra, rb) = (read(&a.join("critical_points.json")), read(&b.join("critical_points.json")));
    assert_eq!(ra["config"]["k"], "3");
    assert_eq!(rb["config"]["k"], "3 + x5");
    assert_eq!(rb["config"]["criterion"]["convention"], "spherical_image");
    assert_eq!(rb["config"]["search"]["seed"], 4);
    assert_eq!(rb["config"]["search"]["interior_starts"], 50);
    assert_ne!(ra["config_hash"], rb["config_hash"]);
}

#[test]
fn expand_writes_report_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"k": "2 + x5^2", "expand": {"bubbles": [{"kind": "interior", "a": [0.8660254037844386, 0, 0, 0, 0.5], "lambda": 20}], "sweep": [20, 40]}}"#,
    )
    .unwrap();
    let o = run(&["expand", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read(&dir.path().join("expand.json"));
    for key in ["J_quad", "J_exp", "parts", "error_budget"] {
        assert!(r["result"].get(key).is_some(), "{key}");
    }
    let sweep = std::fs::read_to_string(dir.path().join("expand_sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(sweep.starts_with("lambda,j_quad,j_exp"));
}

#[test]
fn flow_writes_trajectory_and_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"k": "1 + 5*x5^4 + 0.1*x1", "search": {"interior_starts": 300, "boundary_starts": 100},
            "flow": {"bubbles": [{"kind": "interior", "a": [0.09938079899999067, 0.04969039949999533, 0, 0, 0.9938079899999066], "lambda": 50}]}}"#,
    )
    .unwrap();
    let o = run(&["flow", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read(&dir.path().join("flow.json"));
    assert_eq!(r["result"]["classification"], "blowup");
    let csv = std::fs::read_to_string(dir.path().join("flow_trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "time,alpha_0,a1_0,a2_0,a3_0,a4_0,a5_0,lambda_0,eps_norm,energy");
    assert!(csv.lines().count() > 2);
}

#[test]
fn flow_without_initial_state_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["flow", "--k", "2 + x5^2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn green_and_validate_subset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"green": {"pairs": [[[0, 0, 0, 0, 1], [0.6, 0, 0, 0, 0.8]]]}}"#).unwrap();
    let o = run(&["green", "--config", cfg.to_str().unwrap(), "--convention", "flat_model"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read(&dir.path().join("green.json"));
    assert_eq!(r["result"]["pairs"].as_array().unwrap().len(), 1);
    assert!(r["result"]["pairs"][0]["green"].as_f64().unwrap() > 0.0);

    let o = run(&["validate", "--only", "5,6"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("[PASS] 5.") && table.contains("[PASS] 6."));
    let r = read(&dir.path().join("validate.json"));
    assert_eq!(r["result"]["pass"], true);
}
