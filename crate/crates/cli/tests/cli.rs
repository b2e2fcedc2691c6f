use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn otac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otac"))
        .args(args)
        .output()
        .expect("otac runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn small_scenario(dir: &Path, schedule_p: f64) -> PathBuf {
    let path = dir.join("small.json");
    let text = format!(
        r#"{{
            "topology": {{"kind": "complete", "n_agents": 4}},
            "channel": {{"p": 0.5, "sigma2": 0.01, "lambda": 1.0}},
            "schedule": {{"kind": "power_law", "p": {schedule_p}, "scale": "auto_dmax"}},
            "initial": {{"kind": "ramp", "start": 1.0, "step": 1.0}},
            "horizon": 200,
            "trials": 4,
            "seed": 3
        }}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_traces_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let sc = small_scenario(dir.path(), 0.75);
    let out = dir.path().join("out");
    let res = otac(&[
        "run",
        sc.to_str().unwrap(),
        "--trials",
        "3",
        "--thin",
        "10",
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = std::fs::read_to_string(out.join("trial_00002.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,V,mean,events"));
    let ks: Vec<usize> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ks.first(), Some(&0));
    assert_eq!(ks.last(), Some(&200));
    assert!(ks.windows(2).all(|w| w[1] - w[0] <= 10));
    assert!(!out.join("trial_00003.csv").exists());
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("aggregate.json")).unwrap())
            .unwrap();
    assert_eq!(agg["trials"], 3);
    assert_eq!(agg["seed"], 9);
}

#[test]
fn validate_exit_codes() {
    let ok = otac(&[
        "validate",
        scenarios().join("ring10.json").to_str().unwrap(),
    ]);
    assert!(ok.status.success());
    let bundle: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(bundle["passed"], true);

    let dir = tempfile::tempdir().unwrap();
    let bad = otac(&[
        "validate",
        small_scenario(dir.path(), 0.4).to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("FAIL assumption1"));
}

#[test]
fn run_refuses_inadmissible_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let res = otac(&["run", small_scenario(dir.path(), 0.4).to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("inadmissible"));
}

#[test]
fn check_connectivity_rejects_omitting_sequence() {
    let res = otac(&[
        "check-connectivity",
        scenarios().join("omitting_sequence.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["windows_checked"], 2);
}

#[test]
fn moments_report_passes() {
    let res = otac(&[
        "moments",
        scenarios().join("moments_k5.json").to_str().unwrap(),
        "--draws",
        "20000",
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(report["draws"], 20000);
    assert!(report["estimates"].as_array().unwrap().len() > 20);
}

#[test]
fn compare_rejects_differences_outside_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_scenario(dir.path(), 0.75);
    let b = dir.path().join("b.json");
    let text = std::fs::read_to_string(&a)
        .unwrap()
        .replace("\"seed\": 3", "\"seed\": 4");
    std::fs::write(&b, text).unwrap();
    let res = otac(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--sweep",
        "channel.sigma2",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("seed"));
}

#[test]
fn compare_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_scenario(dir.path(), 0.75);
    let b = dir.path().join("b.json");
    let text = std::fs::read_to_string(&a)
        .unwrap()
        .replace("\"sigma2\": 0.01", "\"sigma2\": \"20dB\"");
    std::fs::write(&b, text).unwrap();
    let out = dir.path().join("cmp");
    let res = otac(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--sweep",
        "channel.sigma2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["trials"], 4);
    assert_eq!(report["sweep"], "channel.sigma2");
}

#[test]
fn unknown_policy_is_a_usage_error() {
    let res = otac(&["run", "x.json", "--policy", "ignore"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("unknown policy"));
}
