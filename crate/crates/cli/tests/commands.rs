use std::path::Path;
use std::process::{Command, Output};

fn lab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offload-lab"))
        .args(args)
        .current_dir(dir)
        .env_remove("OFFLOAD_LLM_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gen_data_writes_requested_records_and_refuses_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["gen-data", "--count", "50", "--out", "d.jsonl"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(stdout(&out).contains("50 records"));

    let again = lab(dir.path(), &["gen-data", "--count", "50", "--out", "d.jsonl"]);
    assert_eq!(code(&again), 1);
    assert!(stderr(&again).contains("--force"));
    assert_eq!(std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap(), text);

    let forced = lab(dir.path(), &["gen-data", "--count", "5", "--out", "d.jsonl", "--force"]);
    assert_eq!(code(&forced), 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn gen_data_count_zero_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["gen-data", "--count", "0", "--out", "d.jsonl"]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn gen_data_is_byte_identical_per_seed_and_styles_keep_labels() {
    let dir = tempfile::tempdir().unwrap();
    for (name, style) in [("a", "standard"), ("b", "standard"), ("c", "unit_variation")] {
        let out = lab(
            dir.path(),
            &["gen-data", "--count", "40", "--seed", "9", "--style", style, "--out", &format!("{name}.jsonl")],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    let labels = |n: &str| -> Vec<u64> {
        read(n)
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["label_action"].as_u64().unwrap())
            .collect()
    };
    assert_eq!(labels("a.jsonl"), labels("c.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn config_file_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[sim]\nnum_servers = 0\n").unwrap();
    std::fs::write(dir.path().join("typo.toml"), "[simulation]\nnum_servers = 3\n").unwrap();
    for file in ["bad.toml", "typo.toml", "missing.toml"] {
        let out = lab(dir.path(), &["eval", "--baseline", "random", "--config", file]);
        assert_eq!(code(&out), 2, "{file}: {}", stderr(&out));
    }
}

#[test]
fn config_file_values_are_used() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("lab.toml"),
        "[sim]\nnum_servers = 3\nepisode_slots = 40\n[eval]\nepisodes = 2\n",
    )
    .unwrap();
    let out = lab(dir.path(), &["eval", "--baseline", "round_robin", "--config", "lab.toml", "--out", "r.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "policy,axis,AL,TDR,PR,LBI");
    assert!(csv.lines().nth(1).unwrap().starts_with("round_robin,base,"));
}

#[test]
fn eval_oracle_prints_full_performance_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["eval", "--baseline", "greedy_oracle", "--episodes", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let row = stdout(&out).lines().nth(1).unwrap().to_string();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[4], "100.00");
}

#[test]
fn eval_random_reports_four_finite_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["eval", "--baseline", "random", "--episodes", "3"]);
    assert_eq!(code(&out), 0);
    let row = stdout(&out).lines().nth(1).unwrap().to_string();
    let metrics: Vec<f64> = row.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(metrics.len(), 4);
    assert!(metrics.iter().all(|m| m.is_finite()));
}

#[test]
fn eval_remote_without_endpoint_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["eval", "--remote", "--out", "r.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("OFFLOAD_LLM_ENDPOINT"));
    assert!(!dir.path().join("r.csv").exists());
}

#[test]
fn eval_needs_exactly_one_policy_source() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lab(dir.path(), &["eval"])), 1);
    assert_eq!(code(&lab(dir.path(), &["eval", "--baseline", "random", "--remote"])), 1);
    assert_eq!(code(&lab(dir.path(), &["eval", "--baseline", "nope"])), 1);
}

#[test]
fn train_is_deterministic_and_checkpoint_transfers_across_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&lab(p, &["gen-data", "--count", "100", "--out", "d.jsonl"])), 0);
    for name in ["c1.json", "c2.json"] {
        let out = lab(
            p,
            &["train", "--sft-data", "d.jsonl", "--out", name, "--iterations", "10", "--seed", "3"],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(stdout(&out).contains("trained,base,"));
    }
    let read = |n: &str| std::fs::read(p.join(n)).unwrap();
    assert_eq!(read("c1.json"), read("c2.json"));
    assert_eq!(read("c1.log.jsonl"), read("c2.log.jsonl"));
    assert_eq!(String::from_utf8(read("c1.log.jsonl")).unwrap().lines().count(), 10);

    let out = lab(
        p,
        &[
            "sweep", "--axis", "servers", "--policies", "checkpoint", "--checkpoint", "c1.json", "--episodes", "1",
            "--out", "s.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8(read("s.csv")).unwrap();
    let axes: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(axes, ["3 servers", "5 servers", "7 servers", "9 servers", "11 servers"]);
}

#[test]
fn train_without_dataset_starts_from_zero_and_lacs_switch_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(dir.path(), &["train", "--lacs", "off", "--out", "c.json", "--iterations", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(ckpt["metadata"]["lambda_weight"], 0.0);
    assert_eq!(ckpt["metadata"]["sft_records"], 0);
    assert!(ckpt["metadata"].get("sft_accuracy").is_none());
}

#[test]
fn sweep_servers_gives_five_by_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = lab(
        dir.path(),
        &["sweep", "--axis", "servers", "--policies", "oracle,random", "--episodes", "1"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().filter(|r| r.starts_with("oracle,")).all(|r| r.split(',').nth(4) == Some("100.00")));
}

#[test]
fn sweep_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&lab(p, &["sweep", "--axis", "bogus", "--policies", "oracle"])), 1);
    assert_eq!(code(&lab(p, &["sweep", "--axis", "servers", "--policies", "mystery"])), 1);
    assert_eq!(code(&lab(p, &["sweep", "--axis", "servers", "--policies", "checkpoint"])), 1);
    assert_eq!(code(&lab(p, &["sweep", "--axis", "servers", "--policies", "remote"])), 2);
}

#[test]
fn malformed_checkpoint_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), r#"{"dimension": 1, "weights": [0.0], "temperature": 1.0}"#).unwrap();
    assert_eq!(code(&lab(p, &["eval", "--checkpoint", "bad.json"])), 2);
    assert_eq!(code(&lab(p, &["eval", "--checkpoint", "absent.json"])), 2);
}

#[test]
fn sweep_failure_keeps_partial_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_offload-lab"))
        .args([
            "sweep", "--axis", "task_size", "--policies", "oracle,remote", "--episodes", "1", "--out", "s.csv",
        ])
        .current_dir(p)
        .env("OFFLOAD_LLM_ENDPOINT", format!("http://{closed}/v1/chat/completions"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let csv = std::fs::read_to_string(p.join("s.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "policy,axis,AL,TDR,PR,LBI");
    assert!(lines[1].starts_with("oracle,2 Mbits,"));
    assert_eq!(lines[2], "remote,2 Mbits,ERROR,ERROR,ERROR,ERROR");
    assert_eq!(lines.len(), 3);
}
