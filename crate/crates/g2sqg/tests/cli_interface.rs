//! End-to-end checks of the `g2sqg` binary: exit codes, artifact
//! formats, and the train → generate → evaluate pipeline.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_g2sqg"))
}

fn out_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("g2sqg-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

const TINY_MODEL: &[&str] = &[
    "--model.embed_dim",
    "16",
    "--model.hidden_dim",
    "16",
    "--train.batch_size",
    "4",
    "--train.max_epochs",
    "2",
    "--dropout.embed",
    "0.0",
    "--dropout.rnn",
    "0.0",
    "--decode.max_len",
    "8",
    "--seed",
    "9",
];

#[test]
fn unknown_command_and_unknown_key_exit_2() {
    let status = bin().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin().args(["train", "--not.a.key", "1"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let status = bin()
        .args(["train", "--out", "/tmp/g2sqg-nodata"])
        .status()
        .unwrap();
    assert_eq!(
        status.code(),
        Some(2),
        "missing data.train is a config error"
    );
}

#[test]
fn build_vocab_writes_token_file() {
    let out = out_dir("vocab");
    let output = bin()
        .args(["build-vocab", "--data.train", &fixture("synthetic20.jsonl")])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let vocab = std::fs::read_to_string(out.join("vocab.txt")).unwrap();
    let lines: Vec<&str> = vocab.lines().collect();
    assert_eq!(&lines[..4], &["<pad>", "<unk>", "<sos>", "<eos>"]);
    assert!(lines.len() > 20);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn gradcheck_on_bundled_fixture_exits_zero() {
    let output = bin()
        .args([
            "gradcheck",
            "--data.train",
            &fixture("tiny2.jsonl"),
            "--model.embed_dim",
            "6",
            "--model.hidden_dim",
            "8",
            "--gradcheck.points",
            "25",
            "--graph.kind",
            "dynamic",
            "--knn.k",
            "3",
        ])
        .args(["--out", out_dir("gradcheck").to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(output.status.code(), Some(0), "stdout: {stdout}");
    let report: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let err = report["max_rel_error"].as_f64().unwrap();
    assert!(err < 1e-4, "printed worst rel error {err}");
}

fn train_tiny(out: &Path) {
    let output = bin()
        .args(["train", "--data.train", &fixture("synthetic20.jsonl")])
        .args(TINY_MODEL)
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn pipeline_train_generate_evaluate() {
    let out = out_dir("pipeline");
    train_tiny(&out);
    assert!(out.join("checkpoint_best.g2s").exists());
    assert!(out.join("vocab.txt").exists());
    assert!(out.join("tags.json").exists());

    // The training log is JSONL with the expected fields.
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    for line in log.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        for field in ["epoch", "train_loss", "val_bleu4", "lr", "stage"] {
            assert!(record.get(field).is_some(), "missing {field}");
        }
        assert_eq!(record["stage"], "pretrain");
    }

    // Generate with the beam width from the config.
    let common = [
        "--data.test".to_string(),
        fixture("synthetic20.jsonl"),
        "--data.checkpoint".to_string(),
        out.join("checkpoint_best.g2s")
            .to_str()
            .unwrap()
            .to_string(),
        "--data.vocab".to_string(),
        out.join("vocab.txt").to_str().unwrap().to_string(),
        "--data.tags".to_string(),
        out.join("tags.json").to_str().unwrap().to_string(),
    ];
    let gen_out = out_dir("pipeline-gen");
    let output = bin()
        .arg("generate")
        .args(&common)
        .args(TINY_MODEL)
        .args(["--decode.beam_width", "1"])
        .args(["--out", gen_out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let predictions = std::fs::read_to_string(gen_out.join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 20);

    // Beam width 1 equals an explicit wider-beam run only in format, but
    // a second width-1 run must be byte-identical (determinism).
    let gen_out2 = out_dir("pipeline-gen2");
    let output = bin()
        .arg("generate")
        .args(&common)
        .args(TINY_MODEL)
        .args(["--decode.beam_width", "1"])
        .args(["--out", gen_out2.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let predictions2 = std::fs::read_to_string(gen_out2.join("predictions.jsonl")).unwrap();
    assert_eq!(predictions, predictions2);

    // Evaluate the generated predictions against gold.
    let eval_out = out_dir("pipeline-eval");
    let output = bin()
        .args(["evaluate", "--data.test", &fixture("synthetic20.jsonl")])
        .args([
            "--data.predictions",
            gen_out.join("predictions.jsonl").to_str().unwrap(),
        ])
        .args(["--out", eval_out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stdout).trim()).unwrap();
    assert_eq!(report["n"], 20);
    assert!(report["bleu4"].as_f64().unwrap() >= 0.0);

    for dir in [&out, &gen_out, &gen_out2, &eval_out] {
        std::fs::remove_dir_all(dir).ok();
    }
}

#[test]
fn evaluate_on_references_scores_one() {
    // Predictions identical to the references → corpus BLEU-4 of 1.
    let out = out_dir("eval-perfect");
    std::fs::create_dir_all(&out).unwrap();
    let gold = std::fs::read_to_string(fixture("synthetic20.jsonl")).unwrap();
    let mut predictions = String::new();
    for line in gold.lines() {
        let ex: serde_json::Value = serde_json::from_str(line).unwrap();
        predictions.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": ex["id"],
                "question_tokens": ex["question_tokens"],
            })
        ));
    }
    let pred_path = out.join("predictions.jsonl");
    std::fs::write(&pred_path, predictions).unwrap();
    let output = bin()
        .args(["evaluate", "--data.test", &fixture("synthetic20.jsonl")])
        .args(["--data.predictions", pred_path.to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stdout).trim()).unwrap();
    assert!((report["bleu4"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((report["rouge_l"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn seed_env_var_overrides_flags() {
    // Two runs with conflicting --seed flags but the same G2SQG_SEED
    // produce identical checkpoints.
    let out_a = out_dir("env-a");
    let out_b = out_dir("env-b");
    for (out, seed_flag) in [(&out_a, "1"), (&out_b, "2")] {
        let output = bin()
            .args(["train", "--data.train", &fixture("tiny2.jsonl")])
            .args([
                "--model.embed_dim",
                "8",
                "--model.hidden_dim",
                "8",
                "--train.max_epochs",
                "1",
                "--dropout.embed",
                "0.0",
                "--dropout.rnn",
                "0.0",
                "--decode.max_len",
                "6",
            ])
            .args(["--seed", seed_flag])
            .args(["--out", out.to_str().unwrap()])
            .env("G2SQG_SEED", "4242")
            .output()
            .unwrap();
        assert_eq!(
            output.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let a = std::fs::read(out_a.join("checkpoint_best.g2s")).unwrap();
    let b = std::fs::read(out_b.join("checkpoint_best.g2s")).unwrap();
    assert_eq!(a, b);
    std::fs::remove_dir_all(&out_a).ok();
    std::fs::remove_dir_all(&out_b).ok();
}

#[test]
fn hop_sweep_reports_a_table() {
    let out = out_dir("sweep");
    let output = bin()
        .args(["hop-sweep", "--data.train", &fixture("tiny2.jsonl")])
        .args([
            "--model.embed_dim",
            "8",
            "--model.hidden_dim",
            "8",
            "--train.max_epochs",
            "1",
            "--train.batch_size",
            "2",
            "--dropout.embed",
            "0.0",
            "--dropout.rnn",
            "0.0",
            "--decode.max_len",
            "6",
            "--sweep.min_hops",
            "1",
            "--sweep.max_hops",
            "3",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("hop_sweep.json")).unwrap())
            .unwrap();
    let rows = table.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["hops"], 1);
    assert_eq!(rows[2]["hops"], 3);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn config_file_is_overridden_by_flags() {
    let out = out_dir("precedence");
    std::fs::create_dir_all(&out).unwrap();
    let conf = out.join("run.conf");
    std::fs::write(&conf, "gnn.hops = 4\nseed = 5\n").unwrap();
    // gradcheck fails fast on a missing dataset, which is enough to see
    // the parsed values; instead use build-vocab with a config chain.
    let output = bin()
        .args(["build-vocab", "--config", conf.to_str().unwrap()])
        .args(["--data.train", &fixture("tiny2.jsonl")])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    std::fs::remove_dir_all(&out).ok();
}
