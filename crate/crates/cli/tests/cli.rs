use std::path::Path;
use std::process::{Command, Output};

fn hbtm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hbtm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_run(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run", "--workload", "pi", "--threads", "2", "--rate", "100,1000", "--reps", "3", "--size", "20000000",
        "--out", dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    hbtm(&args)
}

#[test]
fn run_writes_all_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_run(dir.path(), &["--inject", "exit@1:i5000000", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "report.csv", "overhead_vs_rate.csv", "latency_vs_rate.csv", "queries.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"hbtm-report\": 1"));
    assert!(stdout(&out).contains("exit latency"));
    let latency = std::fs::read_to_string(dir.path().join("latency_vs_rate.csv")).unwrap();
    assert_eq!(latency.lines().filter(|l| l.contains(",exit,")).count(), 2, "{latency}");
}

#[test]
fn report_re_emits_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(dir.path(), &[]).status.success());
    let before = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    std::fs::remove_file(dir.path().join("overhead_vs_rate.csv")).unwrap();
    let out = hbtm(&["report", "--dir", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("report.csv")).unwrap(), before);
    assert!(dir.path().join("overhead_vs_rate.csv").exists());
}

#[test]
fn replay_reads_a_run_log() {
    let dir = tempfile::tempdir().unwrap();
    assert!(small_run(dir.path(), &["--inject", "exit@1:i5000000"]).status.success());
    let log = dir.path().join("heartbeats-1000.log");
    let args = ["replay", "--log", log.to_str().unwrap(), "--mode", "centralized"];
    let a = hbtm(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("thread 1: exit"), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&hbtm(&args)));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 5] = [
        &["run", "--workload", "pi", "--reps", "0"],
        &["run", "--workload", "pi", "--threads", "0"],
        &["run", "--workload", "pi", "--mode", "decentralized", "--threads", "1"],
        &["run", "--workload", "fft"],
        &["run", "--workload", "pi", "--inject", "exit@9:10"],
    ];
    for args in cases {
        assert_eq!(hbtm(args).status.code(), Some(2), "{args:?}");
    }
    let missing = dir.path().join("none");
    assert_ne!(hbtm(&["report", "--dir", missing.to_str().unwrap()]).status.code(), Some(0));
}
