use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn olec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_run_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.txt");
    let coloring = dir.path().join("coloring.txt");
    let report = dir.path().join("report.json");

    let out = olec(&["gen", "regular:40:6:3", "--out", path(&inst)]);
    assert!(out.status.success(), "{out:?}");

    let out = olec(&[
        "run",
        "--instance",
        path(&inst),
        "--q",
        "12",
        "--trials",
        "5",
        "--seed",
        "9",
        "--coloring-out",
        path(&coloring),
        "--out",
        path(&report),
    ]);
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["resolved"]["palette_size"], 18);
    assert_eq!(json["aggregate"]["completed"], 5);
    assert_eq!(json["aggregate"]["trials_with_failure"], 0);

    let out = olec(&["verify", "--instance", path(&inst), "--coloring", path(&coloring)]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("proper"));

    // repeat the first color of arrival 0 on its second edge
    let text = fs::read_to_string(&coloring).unwrap();
    let mut lines: Vec<Vec<String>> = text
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    lines[0][1] = lines[0][0].clone();
    let broken: String = lines.iter().map(|l| l.join(" ") + "\n").collect();
    fs::write(&coloring, broken).unwrap();
    let out = olec(&["verify", "--instance", path(&inst), "--coloring", path(&coloring)]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    assert!(stdout(&out).contains("improper"));
}

#[test]
fn run_is_deterministic_and_stats_rechecks_traces() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let csv = dir.path().join("trials.csv");
    let args = |out: &Path| {
        vec![
            "run".to_string(),
            "--generate".into(),
            "regular:16:4:1".into(),
            "--q".into(),
            "3".into(),
            "--trials".into(),
            "1500".into(),
            "--seed".into(),
            "77".into(),
            "--trace".into(),
            "10:0:0,1".into(),
            "--trace".into(),
            "16:2:5".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let mut first = args(&a);
    first.extend(["--csv".into(), path(&csv).into()]);
    let first: Vec<&str> = first.iter().map(String::as_str).collect();
    assert!(olec(&first).status.success());
    let second = args(&b);
    let second: Vec<&str> = second.iter().map(String::as_str).collect();
    assert!(olec(&second).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("trial,seed,"));
    assert_eq!(rows.lines().count(), 1501);

    let out = olec(&["stats", "--report", path(&a)]);
    let text = stdout(&out);
    assert!(text.contains("marginal t=10"), "{text}");
    assert!(text.contains("joint t=10"), "{text}");
    assert!(out.status.code() == Some(0) || out.status.code() == Some(3));

    let out = olec(&["stats", "--report", path(&a), "--min-samples", "5000"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_arguments_are_rejected() {
    assert!(!olec(&["gen", "regular:4:9:1"]).status.success());
    assert!(!olec(&["gen", "torus:4"]).status.success());
    assert!(!olec(&["run", "--trials", "3"]).status.success());
    let out = olec(&["run", "--generate", "regular:8:2:1", "--trace", "99:0:0"]);
    assert!(!out.status.success());
}

#[test]
fn greedy_report_has_no_q() {
    let out = olec(&["run", "--generate", "gadget:3:4", "--algo", "greedy", "--trials", "2"]);
    assert!(out.status.success(), "{out:?}");
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["resolved"]["q"].is_null());
    assert_eq!(json["aggregate"]["invalid_trials"], 0);
}
