use std::path::Path;
use std::process::{Command, Output};

use ctsdr_core::kinematics::tip_position;
use ctsdr_core::model::{default_config, JointState};
use serde_json::Value;

fn ctsdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctsdr"))
        .args(args)
        .env_remove("CTSDR_CONFIG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_s2_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s2");
    let o = ctsdr(&["run", "--scenario", "S2", "--out", out.to_str().unwrap(), "--snapshot"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "timeline.csv",
        "events.json",
        "tip_locus.csv",
        "centerline.csv",
        "scenario.json",
        "projection_x.pgm",
        "projection_y.pgm",
        "projection_z.pgm",
        "phantom.bits",
        "phantom.json",
        "run.json",
        "metrics.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let metrics = read_json(&out.join("metrics.json"));
    let m = &metrics["measurement"];
    assert!((m["inner_radius"].as_f64().unwrap() - 50.0).abs() < 1.0);
    assert!((m["outer_arc"].as_f64().unwrap() - 40.7).abs() < 1.0);
    let run = read_json(&out.join("run.json"));
    assert_eq!(run["status"], "completed");
    let t = run["insertion_time"].as_f64().unwrap();
    assert!((t - 55.0).abs() <= 1.0, "{t}");
    let pgm = std::fs::read(out.join("projection_z.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));

    let a = ctsdr(&[
        "analyze",
        out.to_str().unwrap(),
        "--out",
        dir.path().join("report.json").to_str().unwrap(),
    ]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let table = stdout(&a);
    assert!(table.contains("Measured Radius of Curvature"), "{table}");
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["runs_used"], 1);
}

#[test]
fn s1_completes_with_a_clearance_warning() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctsdr(&["run", "--scenario", "S1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("clearance"));
    assert_eq!(read_json(&dir.path().join("run.json"))["flagged"], true);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ctsdr(&["run", "--scenario", "NOPE", "--out", d.join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let bad = d.join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = ctsdr(&["--config", bad.to_str().unwrap(), "config"]);
    assert_eq!(o.status.code(), Some(4));

    let mut config: Value = serde_json::from_str(&stdout(&ctsdr(&["config"]))).unwrap();
    config["bit"]["bit_diameter"] = Value::from(-1.0);
    let invalid = d.join("invalid.json");
    std::fs::write(&invalid, config.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ctsdr"))
        .arg("config")
        .env("CTSDR_CONFIG", &invalid)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(ctsdr(&["run"]).status.code(), Some(2));
    assert_eq!(ctsdr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        ctsdr(&["analyze", d.join("missing").to_str().unwrap()]).status.code(),
        Some(5)
    );
    assert_eq!(
        ctsdr(&["plan", "--request", d.join("missing.json").to_str().unwrap()])
            .status
            .code(),
        Some(5)
    );
}

#[test]
fn scripted_fault_exits_with_run_fault() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("dry.json");
    std::fs::write(
        &script,
        r#"{"name":"dry","initial":{"outer_translation":0,"inner_translation":0,"outer_roll":0,"inner_roll":0,"spindle":0},
            "phases":[{"label":"push","command":{"rates":{"inner_translation":1.0},"spindle":0,"until":{"duration":2.0}}}]}"#,
    )
    .unwrap();
    let o = ctsdr(&[
        "run",
        "--script",
        script.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", String::from_utf8_lossy(&o.stderr));
    let events = std::fs::read_to_string(dir.path().join("o/events.json")).unwrap();
    assert!(events.contains("advance_without_spindle"), "{events}");
}

#[test]
fn calibration_prints_recovered_values() {
    let o = ctsdr(&["calibrate", "stiffness", "--observed-radius", "232.3"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rho: f64 = text.trim().strip_prefix("rho = ").unwrap().parse().unwrap();
    // (1 + 50/232.3) / (1 - 50/232.3) = 1.548546...
    assert!((rho - 1.5486).abs() < 1e-3, "{text}");
    assert_eq!(text.trim(), "rho = 1.5485");
    let o = ctsdr(&["calibrate", "runout", "--observed-diameter", "7.4"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "runout = 0.700 mm");
    let o = ctsdr(&["calibrate", "runout", "--observed-diameter", "5.0"]);
    assert_eq!(o.status.code(), Some(7));
}

#[test]
fn plan_writes_scripts_or_reports_unreachable() {
    let config = default_config();
    let joints = JointState {
        outer_translation: 40.7,
        inner_translation: 90.0,
        outer_roll: 0.0,
        inner_roll: 180.0,
        ..Default::default()
    };
    let target = tip_position(&config, &joints).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let req = dir.path().join("req.json");
    std::fs::write(
        &req,
        format!(
            r#"{{"target":[{},{},{}],"total_length":90}}"#,
            target.x, target.y, target.z
        ),
    )
    .unwrap();
    let out = dir.path().join("plan");
    let o = ctsdr(&[
        "plan",
        "--request",
        req.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let plan = read_json(&out.join("plan.json"));
    assert!(plan["best"]["tip_error"].as_f64().unwrap() < 0.5);
    let script = read_json(&out.join("script.json"));
    assert!(!script["phases"].as_array().unwrap().is_empty());

    std::fs::write(&req, r#"{"target":[0,0,200]}"#).unwrap();
    let o = ctsdr(&[
        "plan",
        "--request",
        req.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(8));

    std::fs::write(&req, r#"{"target":"north"}"#).unwrap();
    let o = ctsdr(&[
        "plan",
        "--request",
        req.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}
