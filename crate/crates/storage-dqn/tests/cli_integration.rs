//! End-to-end checks of the command-line binary: every subcommand runs, the
//! file layouts hold, reruns are deterministic, and failures exit with the
//! documented codes.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_storage-dqn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Settings that make a training run take milliseconds.
fn tiny_run(extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "--set",
        "agent.trunk=8",
        "--set",
        "agent.streams=",
        "--set",
        "agent.epochs=2",
        "--set",
        "agent.warmup_transitions=8",
        "--set",
        "agent.batch_size=4",
        "--set",
        "agent.replay_capacity=64",
        "--set",
        "agent.history_days=all",
        "--set",
        "data.days=3",
        "--set",
        "data.train_days=2",
        "--set",
        "data.test_days=1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn train_into(root: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec![
        "train".to_string(),
        "--out".to_string(),
        root.display().to_string(),
    ];
    args.extend(tiny_run(extra));
    let output = bin().args(&args).output().expect("binary runs");
    assert_success(&output);
    let entries: Vec<_> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("train-")
        })
        .collect();
    assert_eq!(entries.len(), 1, "exactly one run directory");
    entries.into_iter().next().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let output = run(&[
            "gen-data",
            path.to_str().unwrap(),
            "--days",
            "60",
            "--seed",
            "7",
        ]);
        assert_success(&output);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let profile = storage_dqn::data::load_csv(&a).unwrap();
    assert_eq!(profile.day_count(), 60);
}

#[test]
fn gen_data_rejects_zero_days() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let output = run(&["gen-data", path.to_str().unwrap(), "--days", "0"]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn train_writes_the_run_directory() {
    let root = tempfile::tempdir().unwrap();
    let run_dir = train_into(root.path(), &[]);
    assert!(run_dir.join("config.txt").is_file());
    assert!(run_dir.join("manifest.json").is_file());
    assert!(run_dir.join("records.csv").is_file());
    assert!(run_dir.join("checkpoints/epoch_0000.ckpt").is_file());
    assert!(run_dir.join("checkpoints/epoch_0002.ckpt").is_file());

    let records = std::fs::read_to_string(run_dir.join("records.csv")).unwrap();
    let lines: Vec<&str> = records.lines().collect();
    assert_eq!(
        lines[0],
        "epoch,total_reward,cost,savings_pct,mean_loss,epsilon"
    );
    assert_eq!(lines.len(), 1 + 2, "one record per epoch");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["agent.discount"], "0.96");
    assert!(manifest["data_digest"].as_str().unwrap().len() > 16);

    // The emitted config is itself a loadable config file.
    let roundtrip_root = tempfile::tempdir().unwrap();
    let output = run(&[
        "train",
        "--config",
        run_dir.join("config.txt").to_str().unwrap(),
        "--out",
        roundtrip_root.path().to_str().unwrap(),
    ]);
    assert_success(&output);
}

#[test]
fn train_reruns_are_bit_identical() {
    let root_a = tempfile::tempdir().unwrap();
    let root_b = tempfile::tempdir().unwrap();
    let run_a = train_into(root_a.path(), &["--seed", "11"]);
    let run_b = train_into(root_b.path(), &["--seed", "11"]);
    for file in [
        "config.txt",
        "manifest.json",
        "records.csv",
        "checkpoints/epoch_0000.ckpt",
        "checkpoints/epoch_0002.ckpt",
    ] {
        assert_eq!(
            std::fs::read(run_a.join(file)).unwrap(),
            std::fs::read(run_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn seed_flag_lands_in_the_manifest() {
    let root = tempfile::tempdir().unwrap();
    let run_dir = train_into(root.path(), &["--seed", "5"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["seed"], "5");
}

#[test]
fn eval_reports_savings_summary() {
    let root = tempfile::tempdir().unwrap();
    let run_dir = train_into(root.path(), &[]);
    let checkpoint = run_dir.join("checkpoints/epoch_0002.ckpt");
    let mut args = vec![
        "eval".to_string(),
        "--checkpoint".to_string(),
        checkpoint.display().to_string(),
        "--out".to_string(),
        root.path().display().to_string(),
    ];
    args.extend(tiny_run(&[]));
    let output = bin().args(&args).output().unwrap();
    assert_success(&output);

    let eval_dir: Vec<_> = std::fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("eval-")
        })
        .collect();
    assert_eq!(eval_dir.len(), 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir[0].join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["headline"]["baseline_cost"].is_number());
    assert!(summary["headline"]["agent_cost"].is_number());
    assert!(summary["headline"]["savings_pct"].is_number());
    assert!(eval_dir[0].join("traces/day_000.csv").is_file());
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let run_dir = train_into(root.path(), &[]);
    let checkpoint = run_dir.join("checkpoints/epoch_0002.ckpt");
    // Adding the cumulative-draw component changes the observation width.
    let mut args = vec![
        "eval".to_string(),
        "--checkpoint".to_string(),
        checkpoint.display().to_string(),
        "--out".to_string(),
        root.path().display().to_string(),
    ];
    args.extend(tiny_run(&["--set", "env.observe_day_cumulative=true"]));
    let output = bin().args(&args).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("observation length"), "stderr: {stderr}");
}

#[test]
fn oracle_charges_only_in_the_cheap_window() {
    let root = tempfile::tempdir().unwrap();
    let output = run(&[
        "oracle",
        "--out",
        root.path().to_str().unwrap(),
        "--set",
        "data.evening_peak_w=0",
        "--set",
        "data.noise_frac=0",
    ]);
    assert_success(&output);
    let oracle_dir: Vec<_> = std::fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_string_lossy()
                .starts_with("oracle-")
        })
        .collect();
    let trace = std::fs::read_to_string(oracle_dir[0].join("traces/day_000.csv")).unwrap();
    let mut saw_charge = false;
    for line in trace.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let hour: usize = fields[0].parse().unwrap();
        match fields[3] {
            "charge" => {
                saw_charge = true;
                assert!(hour < 8, "charge at hour {hour}");
            }
            "discharge" => {
                assert!((8..16).contains(&hour), "discharge at hour {hour}");
            }
            _ => {}
        }
    }
    assert!(saw_charge, "optimal plan uses the battery on table1");

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(oracle_dir[0].join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["headline"]["savings_pct"].as_f64().unwrap() > 0.0);
}

#[test]
fn missing_data_file_exits_with_usage_code() {
    let root = tempfile::tempdir().unwrap();
    let output = run(&[
        "train",
        "--out",
        root.path().to_str().unwrap(),
        "--set",
        "data.csv=/no/such/profile.csv",
    ]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/no/such/profile.csv"), "stderr: {stderr}");
}

#[test]
fn explain_replays_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let run_dir = train_into(root.path(), &[]);
    let output = run(&["explain", run_dir.to_str().unwrap()]);
    assert_success(&output);
    let explain_dir = run_dir.join("explain");
    let progression = std::fs::read_to_string(explain_dir.join("progression.csv")).unwrap();
    let lines: Vec<&str> = progression.lines().collect();
    assert_eq!(lines[0], "epoch,savings_pct,charged_wh,discharged_wh");
    assert_eq!(lines.len(), 1 + 2, "one line per checkpoint");
    assert!(explain_dir.join("histograms/epoch_0000.csv").is_file());
    assert!(explain_dir.join("histograms/epoch_0002.csv").is_file());
}

#[test]
fn sweep_emits_matrix_and_is_thread_count_invariant() {
    let mut outputs = Vec::new();
    for jobs in ["1", "2"] {
        let root = tempfile::tempdir().unwrap();
        let mut args = vec![
            "sweep".to_string(),
            "--out".to_string(),
            root.path().display().to_string(),
            "--jobs".to_string(),
            jobs.to_string(),
        ];
        args.extend(tiny_run(&[
            "--set",
            "sweep.capacities=900,1800",
            "--set",
            "oracle.quantum_wh=50",
            "--set",
            "agent.epochs=1",
        ]));
        let output = bin().args(&args).output().unwrap();
        assert_success(&output);
        let sweep_dir: Vec<_> = std::fs::read_dir(root.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                p.file_name()
                    .unwrap()
                    .to_string_lossy()
                    .starts_with("sweep-")
            })
            .collect();
        let diagonal = std::fs::read_to_string(sweep_dir[0].join("sweep.csv")).unwrap();
        let matrix = std::fs::read_to_string(sweep_dir[0].join("cross_matrix.csv")).unwrap();
        assert_eq!(diagonal.lines().count(), 1 + 2);
        assert_eq!(matrix.lines().count(), 1 + 4);
        outputs.push((diagonal, matrix));
        let _ = root; // dropped here; bytes already captured
    }
    assert_eq!(outputs[0], outputs[1], "worker count changed sweep results");
}

#[test]
fn output_root_env_var_is_honored() {
    let root = tempfile::tempdir().unwrap();
    let mut args = vec!["train".to_string()];
    args.extend(tiny_run(&[]));
    let output = bin()
        .env("STORAGE_DQN_OUT", root.path())
        .args(&args)
        .output()
        .unwrap();
    assert_success(&output);
    let entries: Vec<_> = std::fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(entries.len(), 1);
    assert!(entries[0]
        .file_name()
        .unwrap()
        .to_string_lossy()
        .starts_with("train-"));
}

#[test]
fn help_lists_the_config_keys() {
    for (command, key) in [
        ("train", "agent.discount"),
        ("eval", "data.test_days"),
        ("sweep", "sweep.capacities"),
        ("oracle", "oracle.quantum_wh"),
    ] {
        let output = run(&[command, "--help"]);
        assert_success(&output);
        let stdout = String::from_utf8_lossy(&output.stdout);
        assert!(stdout.contains(key), "{command} --help misses {key}");
    }
}
