use std::path::Path;
use std::process::{Command, Output};

fn tsac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsac"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn count(dir: &Path, prefix: &str, ext: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .count()
}

#[test]
fn dare_on_boeing_prints_small_residual() {
    let out = tsac(&["dare", "--plant", "boeing747", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // nalgebra serializes a matrix as [data, rows, cols]
    assert_eq!(report["p"][1], 4);
    assert_eq!(report["p"][2], 4);
    assert!(report["residual"].as_f64().unwrap() <= 1e-8);
    assert!(report["closed_loop_radius"].as_f64().unwrap() < 1.0);

    let text = stdout(&tsac(&["dare"]));
    assert!(text.starts_with("P =\n"));
    assert_eq!(text.lines().skip(1).take_while(|l| l.starts_with("  [")).count(), 4);
}

#[test]
fn check_system_reports_unreachable_mode() {
    let out = tsac(&["check-system", "--a", "[[2.0]]", "--b", "[[0.0]]"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("NotStabilizable"));
}

#[test]
fn bench_file_count_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsac(&[
        "bench",
        "--plant",
        "scalar",
        "--algorithms",
        "tsac,cec",
        "--runs",
        "2",
        "--horizon",
        "50",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for label in ["tsac", "cec"] {
        assert_eq!(count(&dir.path().join(label), "run_", ".json"), 2);
        assert_eq!(count(&dir.path().join(label), "steps_", ".csv"), 2);
    }
    assert_eq!(count(dir.path(), "summary", ".json"), 1);

    let text = std::fs::read_to_string(dir.path().join("tsac/steps_0000.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,cost,cum_regret,state_norm,policy_id,est_error,lambda_min_v,optimistic"
    );
    assert_eq!(text.lines().count(), 51);

    let out = tsac(&["slope", dir.path().to_str().unwrap(), "--label", "tsac", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fits: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(fits[0]["runs"], 2);
    assert!(fits[0]["fit"]["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn run_streams_csv_to_stdout() {
    let out = tsac(&["run", "--plant", "scalar", "--horizon", "20", "--seed", "3"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 21);
    assert!(text.starts_with("t,cost,cum_regret"));
    assert_eq!(text, stdout(&tsac(&["run", "--plant", "scalar", "--horizon", "20", "--seed", "3"])));
}

#[test]
fn exit_codes() {
    let missing = tsac(&["--config", "/definitely/not/here.toml", "bench"]);
    assert_eq!(missing.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert_eq!(stderr.trim_end().lines().count(), 1);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "runs = 0\n[plant]\nbuiltin = \"scalar\"\n[[controllers]]\nalgorithm = \"tsac\"\n").unwrap();
    assert_eq!(tsac(&["--config", bad.to_str().unwrap(), "bench"]).status.code(), Some(2));

    assert_eq!(tsac(&["dare", "--a", "[[2.0]]", "--b", "[[0.0]]"]).status.code(), Some(4));
    assert_ne!(tsac(&["no-such-command"]).status.code(), Some(0));
}

#[test]
fn optimism_reports_a_probability() {
    let out = tsac(&["optimism", "--plant", "scalar", "--draws", "200", "--format", "json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let p = r["p_opt"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}
