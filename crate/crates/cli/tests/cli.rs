use std::path::PathBuf;
use std::process::{Command, Output};

fn rim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rim")).args(args).output().unwrap()
}

fn repo(rel: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn report_renders_published_averages() {
    let out = rim(&["report", "--rows", &repo("fixtures/table_fedavg.csv")]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert_eq!(
        last.split_whitespace().collect::<Vec<_>>(),
        ["Average", "60.71", "0.91"]
    );
}

#[test]
fn report_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("r.json");
    let json = json.to_str().unwrap();
    assert!(
        rim(&["report", "--rows", &repo("fixtures/table_fedper.csv"), "--json", json])
            .status
            .success()
    );
    let again = rim(&["report", "--input", json]);
    assert!(again.status.success());
    assert!(String::from_utf8(again.stdout).unwrap().contains("46.34"));
}

#[test]
fn zero_users_is_rejected() {
    let out = rim(&["generate", "--users", "0", "--days", "3"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_users"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(rim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        rim(&["generate", "--users", "2", "--days", "2", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(rim(&["fed", "--strategy", "ditto"]).status.code(), Some(1));
    assert_eq!(rim(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[federated]\nrounds = 3\n").unwrap();
    let out = rim(&[
        "generate",
        "--users",
        "1",
        "--days",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("federated.rounds"));

    std::fs::write(&cfg, "[training]\nlr = 0.1\n").unwrap();
    let out = rim(&[
        "generate",
        "--users",
        "1",
        "--days",
        "1",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
}

#[test]
fn runtime_errors_exit_3() {
    let out = rim(&["trace", "replay", "--input", "/nonexistent/trace.csv"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn trace_synth_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("night.csv");
    let trace = trace.to_str().unwrap();
    let synth = rim(&[
        "trace",
        "synth",
        "--schedule",
        &repo("configs/night.json"),
        "--seed",
        "3",
        "--idle-sample-ms",
        "60000",
        "--out",
        trace,
    ]);
    assert!(synth.status.success(), "{}", String::from_utf8_lossy(&synth.stderr));
    let out = rim(&["trace", "replay", "--input", trace]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    // 120 + 10 minutes of walking at 90 steps/min.
    assert_eq!(row[1], "11700");
    let sleep: f64 = row[3].parse().unwrap();
    assert!((sleep - 8.0).abs() <= 2.0 / 60.0);
}

#[test]
fn recommend_prints_messages_per_day() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    let csv = csv.to_str().unwrap();
    assert!(
        rim(&["generate", "--users", "1", "--days", "4", "--seed", "2", "--out", csv])
            .status
            .success()
    );
    let out = rim(&["recommend", "--record", csv]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("user 0 ")).count(), 4);
}
