use std::path::PathBuf;
use std::process::{Command, Output};

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn airstack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airstack")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn validate_exit_codes() {
    let ok = airstack(&["validate", "--config", &scenario("urc-comp.json")]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(stdout(&ok), "ok\n");

    let missing = airstack(&["validate", "--config", "/nonexistent/x.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let err = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(err.matches("cannot read").count(), 1, "{err}");

    let bad = airstack(&["validate", "--config", &scenario("fixtures/shared-channel.json")]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("channel 7 used by bearers 1 and 2"));
}

#[test]
fn malformed_json_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("broken.json");
    std::fs::write(&p, "{ \"rats\": [").unwrap();
    let o = airstack(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_json_to_stdout() {
    let o = airstack(&["run", "--config", &scenario("fixtures/idle.json"), "--seed", "3"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["seed"], 3);
    assert_eq!(v["duration_ms"], 2000);
    assert_eq!(v["events"]["tti_tick"], 2000);
}

#[test]
fn duration_override_and_csv() {
    let o = airstack(&[
        "run",
        "--config",
        &scenario("urc-comp.json"),
        "--duration-ms",
        "300",
        "--format",
        "csv",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("bearer,ue,service,dispatch_mode,offered"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("1,1,URC,DUPLICATE,"), "{row}");
    assert_eq!(lines.next(), None);
}

#[test]
fn trace_lands_next_to_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = airstack(&[
        "run",
        "--config",
        &scenario("fixtures/qos-escalation.json"),
        "--duration-ms",
        "500",
        "--trace",
        "rrm",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let trace = std::fs::read_to_string(dir.path().join("report.rrm.csv")).unwrap();
    assert!(trace.lines().any(|l| l.contains(",escalate,")), "{trace}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["bearers"][0]["dispatch_mode"], "SPLIT");
}

#[test]
fn sweep_aggregates_consecutive_seeds() {
    let o = airstack(&[
        "sweep",
        "--config",
        &scenario("urc-comp.json"),
        "--seed",
        "10",
        "--count",
        "3",
        "--duration-ms",
        "500",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let seeds: Vec<u64> = v["runs"].as_array().unwrap().iter().map(|r| r["seed"].as_u64().unwrap()).collect();
    assert_eq!(seeds, [10, 11, 12]);
    assert_eq!(v["in_order_violations"], 0);
    assert_eq!(v["aborted_runs"], 0);
    let spread = &v["delivery_ratio"];
    assert!(spread["min"].as_f64().unwrap() <= spread["mean"].as_f64().unwrap());
    assert!(spread["mean"].as_f64().unwrap() <= spread["max"].as_f64().unwrap());
}

#[test]
fn sweep_matches_individual_runs() {
    let cfg = scenario("fixtures/harq-half.json");
    let sweep = airstack(&["sweep", "--config", &cfg, "--seed", "4", "--count", "2", "--duration-ms", "400"]);
    let v: serde_json::Value = serde_json::from_slice(&sweep.stdout).unwrap();
    for (i, seed) in ["4", "5"].iter().enumerate() {
        let run = airstack(&["run", "--config", &cfg, "--seed", seed, "--duration-ms", "400"]);
        let r: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
        assert_eq!(v["runs"][i]["harq_drops"], r["totals"]["harq_drops"]);
        assert_eq!(v["runs"][i]["delivered"], r["totals"]["fates"]["delivered"]);
    }
}

#[test]
fn list_defaults_covers_every_rat_kind() {
    let o = airstack(&["list-defaults"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let kinds: Vec<&str> = v["rats"].as_array().unwrap().iter().map(|r| r["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["LTE_LIKE", "WIFI_LIKE", "FBMC_LIKE"]);
    let wifi = &v["rats"][1];
    assert_eq!(wifi["has_rlc"], false);
    assert_eq!(v["qos"][1]["service_type"], "URC");
}
