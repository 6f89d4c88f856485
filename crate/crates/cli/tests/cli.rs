use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn callout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_callout"))
        .args(args)
        .env_remove("CALLOUT_REPS")
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &str) -> String {
    std::fs::read_to_string(Path::new(p)).unwrap()
}

const SATURATED: &str = r#"{
  "schema_version": 1,
  "name": "saturated",
  "objective": "value",
  "slots": [1.0],
  "networks": [{"rho": 1.0}],
  "constraint": {"mode": "time-average", "arrival": {"kind": "uniform"}},
  "impression_types": [
    {"id": 0, "arrival_prob": 1.0, "vertical": 0, "min_price": 0.0,
     "bids": [{"values": [1.0], "probs": [1.0]}]}
  ],
  "seeds": {"generation": 1, "perturbation": 2, "run": 3}
}"#;

#[test]
fn generate_is_deterministic_for_both_kinds() {
    let dir = TempDir::new().unwrap();
    for kind in ["gaussian", "pareto"] {
        let a = path(&dir, &format!("{kind}-a.json"));
        let b = path(&dir, &format!("{kind}-b.json"));
        for out in [&a, &b] {
            let o = callout(&["generate", "--kind", kind, "--seed", "1", "--out", out]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        assert_eq!(read(&a), read(&b));
        let s = callout_core::Scenario::from_json(&read(&a)).unwrap();
        assert_eq!(s.to_json().unwrap().trim_end(), read(&a).trim_end());
    }
}

#[test]
fn learn_reports_zero_lambda_on_a_saturated_instance() {
    let dir = TempDir::new().unwrap();
    let scenario = path(&dir, "s.json");
    std::fs::write(&scenario, SATURATED).unwrap();
    let duals = path(&dir, "d.json");
    let o = callout(&[
        "learn",
        "--scenario",
        &scenario,
        "--samples",
        "50",
        "--shrink",
        "0",
        "--out",
        &duals,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("lambda [0.000000]"), "{text}");
    assert!(text.contains("validation PASS"), "{text}");
    let again = path(&dir, "d2.json");
    callout(&[
        "learn",
        "--scenario",
        &scenario,
        "--samples",
        "50",
        "--shrink",
        "0",
        "--out",
        &again,
    ]);
    assert_eq!(read(&duals), read(&again));
}

#[test]
fn simulate_writes_identical_csv_for_matched_seeds() {
    let dir = TempDir::new().unwrap();
    let scenario = path(&dir, "s.json");
    let duals = path(&dir, "d.json");
    callout(&[
        "generate",
        "--seed",
        "2",
        "--networks",
        "6",
        "--verticals",
        "3",
        "--bins",
        "10",
        "--out",
        &scenario,
    ]);
    let o = callout(&["learn", "--scenario", &scenario, "--out", &duals]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let out = path(&dir, name);
        let summary = path(&dir, &format!("summary-{name}"));
        let o = callout(&[
            "--threads",
            "2",
            "simulate",
            "--scenario",
            &scenario,
            "--duals",
            &duals,
            "--policy",
            "lp-val",
            "--impressions",
            "300",
            "--reps",
            "3",
            "--out",
            &out,
            "--summary",
            &summary,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        csvs.push(read(&out));
        assert!(read(&summary).starts_with("policy,param,replications,value_mean"));
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0].lines().count(), 4);
    assert!(csvs[0].starts_with("policy,param,replication,seed,value"));
}

#[test]
fn sweep_reports_peaks() {
    let dir = TempDir::new().unwrap();
    let scenario = path(&dir, "s.json");
    callout(&[
        "generate",
        "--seed",
        "3",
        "--networks",
        "4",
        "--verticals",
        "2",
        "--bins",
        "8",
        "--out",
        &scenario,
    ]);
    let out = path(&dir, "sweep.csv");
    let o = callout(&[
        "sweep",
        "--scenario",
        &scenario,
        "--family",
        "set",
        "--grid",
        "1,2",
        "--impressions",
        "200",
        "--reps",
        "2",
        "--out",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&out).lines().count(), 1 + 4 * 2 * 2);
    assert_eq!(stdout(&o).matches("peak ").count(), 4);
}

#[test]
fn malformed_config_exits_two_and_names_the_field() {
    let dir = TempDir::new().unwrap();
    let scenario = path(&dir, "bad.json");
    std::fs::write(&scenario, SATURATED.replace(r#""rho": 1.0"#, r#""rho": 1.5"#)).unwrap();
    let o = callout(&[
        "simulate",
        "--scenario",
        &scenario,
        "--policy",
        "random",
        "--out",
        &path(&dir, "x.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("networks[0].rho"), "{}", stderr(&o));

    std::fs::write(&scenario, SATURATED.replace(r#""probs": [1.0]"#, r#""probs": "one""#)).unwrap();
    let o = callout(&["learn", "--scenario", &scenario, "--out", &path(&dir, "d.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("impression_types[0].bids[0]"), "{}", stderr(&o));

    let good = path(&dir, "good.json");
    std::fs::write(&good, SATURATED).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_callout"))
        .args([
            "simulate",
            "--scenario",
            &good,
            "--policy",
            "random",
            "--out",
            &path(&dir, "x.csv"),
        ])
        .env("CALLOUT_REPS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("replications"), "{}", stderr(&o));
}

#[test]
fn validate_filters_suites_and_rejects_bad_tau() {
    let o = callout(&["validate", "--suite", "token-bucket"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("[PASS] token-bucket"), "{text}");
    assert_eq!(text.matches("[PASS]").count(), 1);

    let o = callout(&["validate", "--suite", "nope"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let scenario = path(&dir, "s.json");
    let duals = path(&dir, "d.json");
    callout(&[
        "generate",
        "--seed",
        "4",
        "--networks",
        "4",
        "--verticals",
        "2",
        "--bins",
        "8",
        "--slots",
        "1,0.5",
        "--min-price",
        "none",
        "--objective",
        "value",
        "--out",
        &scenario,
    ]);
    let o = callout(&["learn", "--scenario", &scenario, "--samples", "100", "--out", &duals]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(callout(&["validate", "--duals", &duals]).status.success());

    let mut d: serde_json::Value = serde_json::from_str(&read(&duals)).unwrap();
    d["tau"][0]["tau"] = serde_json::json!([0.1, 0.4]);
    std::fs::write(&duals, serde_json::to_string(&d).unwrap()).unwrap();
    let o = callout(&["validate", "--duals", &duals]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("[FAIL] duals-file"), "{}", stdout(&o));
    assert!(stdout(&o).contains("tau-monotonicity"), "{}", stdout(&o));
}
