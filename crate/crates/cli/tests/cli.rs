use std::fs;
use std::process::Command;

use bridgesafe::harness::{read_metrics, Phase};
use bridgesafe_cli::{cli_main, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME};

fn run(args: &[&str]) -> i32 {
    cli_main(std::iter::once("bridgesafe").chain(args.iter().copied()))
}

#[test]
fn unknown_flags_and_subcommands_are_usage_errors() {
    assert_eq!(run(&["train", "--bogus"]), EXIT_INVALID);
    assert_eq!(run(&["frobnicate"]), EXIT_INVALID);
    assert_eq!(run(&[]), EXIT_INVALID);
    assert_eq!(run(&["verify", "--suite", "nope"]), EXIT_INVALID);
    assert_eq!(run(&["train", "--variant", "d"]), EXIT_INVALID);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn missing_config_names_the_path() {
    let out = Command::new(env!("CARGO_BIN_EXE_bridgesafe"))
        .args(["train", "--config", "/no/such/run.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_INVALID));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/run.toml"), "{err}");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    fs::write(&p, "[env]\ncomm_rang = 0.2\n").unwrap();
    assert_eq!(run(&["train", "--config", p.to_str().unwrap()]), EXIT_INVALID);
    fs::write(&p, "[train]\nbatch = 0\n").unwrap();
    assert_eq!(run(&["train", "--config", p.to_str().unwrap()]), EXIT_INVALID);
}

#[test]
fn print_schema_emits_parseable_defaults() {
    let out = Command::new(env!("CARGO_BIN_EXE_bridgesafe"))
        .arg("--print-schema")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = bridgesafe::RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, bridgesafe::RunConfig::default());
}

#[test]
fn verify_geometry_prints_table_and_passes() {
    let out = Command::new(env!("CARGO_BIN_EXE_bridgesafe"))
        .args(["verify", "--suite", "geometry"])
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{text}");
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn train_eval_replay_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "seed = 11\n[train]\ntotal_steps = 300\nlearning_starts = 64\nhidden = 8\n",
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let code = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--variant",
        "b",
        "--output",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let train = read_metrics(run_dir.join("train_metrics.jsonl")).unwrap();
    assert_eq!(train.len(), 3);
    assert!(train.iter().all(|r| r.phase == Phase::Train && r.variant == bridgesafe::Variant::B));

    let ck = run_dir.join("checkpoint.json");
    assert_eq!(run(&["eval", "--checkpoint", ck.to_str().unwrap()]), EXIT_OK);
    let eval = read_metrics(run_dir.join("eval_metrics.jsonl")).unwrap();
    assert_eq!(eval.len(), 100);
    assert!(eval.iter().all(|r| (0.0..=100.0).contains(&r.coverage)));

    let log = run_dir.join("eval_trajectories.jsonl");
    assert_eq!(run(&["replay", "--log", log.to_str().unwrap()]), EXIT_OK);

    // A tampered reward diverges at runtime; a truncated file is a parse error.
    let text = fs::read_to_string(&log).unwrap();
    let tampered = text.replacen("\"joint_reward\":", "\"joint_reward\":1e3+", 1);
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let k = lines.iter().position(|l| l.contains("\"joint_reward\"")).unwrap();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[k]).unwrap();
    let jr = rec["joint_reward"].as_f64().unwrap();
    rec["joint_reward"] = serde_json::json!(jr + 1.0);
    lines[k] = rec.to_string();
    fs::write(&log, lines.join("\n") + "\n").unwrap();
    assert_eq!(run(&["replay", "--log", log.to_str().unwrap()]), EXIT_RUNTIME);
    fs::write(&log, tampered).unwrap();
    assert_eq!(run(&["replay", "--log", log.to_str().unwrap()]), EXIT_INVALID);
    fs::write(&log, &text[..text.len() / 2]).unwrap();
    assert_eq!(run(&["replay", "--log", log.to_str().unwrap()]), EXIT_INVALID);
}

#[test]
fn eval_refuses_corrupt_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.json");
    fs::write(&ck, "{\"format\":\"something-else\"}").unwrap();
    assert_eq!(run(&["eval", "--checkpoint", ck.to_str().unwrap()]), EXIT_INVALID);
    assert_eq!(
        run(&["eval", "--checkpoint", dir.path().join("none.json").to_str().unwrap()]),
        EXIT_INVALID
    );
}

#[test]
fn run_mode_without_artifacts_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.toml");
    fs::write(&p, "mode = \"replay\"\noutput_dir = \"/no/such/dir\"\n").unwrap();
    assert_eq!(run(&["run", "--config", p.to_str().unwrap()]), EXIT_INVALID);
}
