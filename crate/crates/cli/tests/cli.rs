use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bregman-accel"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_config(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn affine_run_writes_full_trace_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("accel");
    let o = run_config(&config("affine_accel.json"), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next(),
        Some("t,e_t,a_t,alpha_t,delta_norm_sq,eta_div")
    );
    assert_eq!(lines.count(), 10_001);

    let summary = read_json(&out.join("summary.json"));
    let slope = summary["rate"]["slope"].as_f64().unwrap();
    assert!((slope + 2.0).abs() <= 1e-3, "slope {slope}");
    assert_eq!(summary["iterations_to_epsilon"][0]["t"], 158);
    assert_eq!(summary["iterations_to_epsilon"][1]["t"], 1581);

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config_digest"], summary["config_digest"]);
    assert!(manifest["files"].as_array().unwrap().len() >= 4);
}

#[test]
fn set_override_and_seed_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("one");
    let o = run_config(
        &config("affine_accel.json"),
        &out,
        &["--set", "iterations=1", "--seed", "9"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3, "header plus two rows");
    assert_eq!(read_json(&out.join("config.json"))["seed"], 9);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run_config(
        &config("affine_accel.json"),
        &tmp.path().join("x"),
        &["--set", "s0=[0,0,0]"],
    );
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(
        msg.contains("expected 2") && msg.contains("found 3"),
        "{msg}"
    );

    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        "{\n  \"geometry\": {\"kind\": \"squared-euclidean\", \"dim\": 2},\n  \"typo\": 1\n}\n",
    )
    .unwrap();
    let o = run_config(&bad, &tmp.path().join("y"), &[]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("typo") && msg.contains("line 3"), "{msg}");

    let o = run_config(&tmp.path().join("missing.json"), &tmp.path().join("z"), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn audit_reports_beta_and_needs_states() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("accel");
    assert_eq!(
        code(&run_config(
            &config("affine_accel.json"),
            &out,
            &["--set", "iterations=2000"]
        )),
        0
    );
    let o = run(&["audit", "--dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let audit = read_json(&out.join("audit.json"));
    assert!((audit["beta_max"].as_f64().unwrap() - 0.75).abs() < 1e-9);
    let status = |name: &str| {
        audit["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .unwrap()["status"]
            .clone()
    };
    assert_eq!(status("cross-term"), "vacuous-pass");
    assert_eq!(status("descent"), "pass");
    assert!(audit["induction"]["violations"].as_u64().unwrap() > 0);

    let bare = tmp.path().join("bare");
    assert_eq!(
        code(&run_config(
            &config("affine_accel.json"),
            &bare,
            &["--set", "retain_states=false"]
        )),
        0
    );
    let o = run(&["audit", "--dir", bare.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("retain_states"));

    let o = run(&[
        "audit",
        "--dir",
        tmp.path().join("nothing").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn rate_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("accel");
    assert_eq!(
        code(&run_config(&config("affine_accel.json"), &out, &[])),
        0
    );
    let trace = out.join("trace.csv");
    let o = run(&[
        "rate",
        "--trace",
        trace.to_str().unwrap(),
        "--window",
        "100:10000",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((fit["slope"].as_f64().unwrap() + 2.0).abs() < 1e-6);
    assert!(fit["r2"].as_f64().unwrap() > 0.999);

    let o = run(&[
        "rate",
        "--trace",
        trace.to_str().unwrap(),
        "--window",
        "100:105",
    ]);
    assert_eq!(code(&o), 2);
    let o = run(&[
        "rate",
        "--trace",
        trace.to_str().unwrap(),
        "--window",
        "nonsense",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("noisy_audit.json");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run_config(&cfg, &a, &[])), 0);
    assert_eq!(code(&run_config(&cfg, &b, &[])), 0);
    assert_eq!(
        fs::read(a.join("trace.csv")).unwrap(),
        fs::read(b.join("trace.csv")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("states.csv")).unwrap(),
        fs::read(b.join("states.csv")).unwrap()
    );
}

#[test]
fn sweep_over_gamma_and_parallelism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gamma.json");
    let mut doc = read_json(&config("affine_accel.json"));
    doc["iterations"] = 500.into();
    doc["sweep"] = serde_json::json!({"operator.params.gamma": [0.3, 0.5, 0.8]});
    fs::write(&cfg, doc.to_string()).unwrap();

    let one = tmp.path().join("p1");
    let four = tmp.path().join("p4");
    for (dir, k) in [(&one, "1"), (&four, "4")] {
        let o = run(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--parallel",
            k,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let index = fs::read_to_string(one.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 4);
    let point_dirs = fs::read_dir(&one)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(point_dirs, 3);
    assert_eq!(index, fs::read_to_string(four.join("index.csv")).unwrap());

    doc["sweep"] = serde_json::json!({});
    fs::write(&cfg, doc.to_string()).unwrap();
    let o = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("e").to_str().unwrap(),
        "--parallel",
        "2",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failure_exits_1_with_state_dump() {
    // e_0 = ½‖s_0 - s*‖² overflows, so the very first ledger row is rejected.
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = run_config(
        &config("affine_accel.json"),
        &out,
        &["--set", "s0=[1e200,0]"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("failure.json"));
    let dump = read_json(&out.join("failure.json"));
    assert_eq!(dump["state_dump"]["t"], 0);
    assert_eq!(dump["state_dump"]["state"][0], 1e200);
}
