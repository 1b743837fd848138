//! Batch command-line surface:
//! `g2sqg <command> [--config <path>] [--out <dir>] [--key value ...]`.
//!
//! Commands: build-vocab, train, finetune, generate, evaluate,
//! gradcheck, hop-sweep. Flags override config-file values; the
//! `G2SQG_SEED` environment variable overrides the seed last. Exit
//! codes: 0 success, 1 runtime failure, 2 usage/config errors.

use crate::config::RunConfig;
use crate::corpus::{
    build_vocab, load_contextual, load_dataset, load_glove, load_tag_indices, random_embeddings,
    save_tag_indices, EmbeddingBank, PassageExample, TagIndex, Vocabulary,
};
use crate::error::{Error, Result};
use crate::gradcore::{check_all_primitives, grad_check, GradCheckReport, RealArray};
use crate::model::QgModel;
use crate::rewards::evaluate_corpus;
use crate::rng::SeededRng;
use crate::trainer::{load_checkpoint, OptimizerState, Stage, Trainer};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

const COMMANDS: &[&str] = &[
    "build-vocab",
    "train",
    "finetune",
    "generate",
    "evaluate",
    "gradcheck",
    "hop-sweep",
];

/// Parse arguments (without the program name) into a command, config and
/// output directory.
pub fn parse_args(args: &[String]) -> Result<(String, RunConfig, PathBuf)> {
    let Some(command) = args.first() else {
        return Err(Error::Usage(format!(
            "expected a command; one of {COMMANDS:?}"
        )));
    };
    if !COMMANDS.contains(&command.as_str()) {
        return Err(Error::Usage(format!(
            "unknown command `{command}`; expected one of {COMMANDS:?}"
        )));
    }
    let mut pairs = Vec::new();
    let mut config_path: Option<PathBuf> = None;
    let mut out_dir = PathBuf::from("g2sqg_out");
    let mut i = 1;
    while i < args.len() {
        let flag = &args[i];
        let Some(key) = flag.strip_prefix("--") else {
            return Err(Error::Usage(format!("expected a --flag, got `{flag}`")));
        };
        let Some(value) = args.get(i + 1) else {
            return Err(Error::Usage(format!("flag `{flag}` is missing a value")));
        };
        match key {
            "config" => config_path = Some(PathBuf::from(value)),
            "out" => out_dir = PathBuf::from(value),
            other => pairs.push((other.to_string(), value.clone())),
        }
        i += 2;
    }
    // Precedence: defaults < config file < flags < G2SQG_SEED.
    let mut cfg = RunConfig::default();
    if let Some(path) = config_path {
        cfg.apply_file(&path)?;
    }
    for (key, value) in &pairs {
        cfg.set(key, value)
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    if let Ok(seed) = std::env::var("G2SQG_SEED") {
        cfg.set("seed", &seed)?;
    }
    cfg.validate()?;
    Ok((command.clone(), cfg, out_dir))
}

/// Entry point for the binary; maps errors to exit codes.
pub fn run(args: &[String]) -> i32 {
    match parse_args(args) {
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
        Ok((command, cfg, out_dir)) => match dispatch(&command, &cfg, &out_dir) {
            Ok(()) => 0,
            Err(e @ (Error::Usage(_) | Error::Config(_) | Error::UnknownParameter(_))) => {
                eprintln!("error: {e}");
                2
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

pub fn dispatch(command: &str, cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    match command {
        "build-vocab" => cmd_build_vocab(cfg, out_dir),
        "train" => cmd_train(cfg, out_dir, Stage::Pretrain),
        "finetune" => cmd_train(cfg, out_dir, Stage::Finetune),
        "generate" => cmd_generate(cfg, out_dir),
        "evaluate" => cmd_evaluate(cfg, out_dir),
        "gradcheck" => cmd_gradcheck(cfg),
        "hop-sweep" => cmd_hop_sweep(cfg, out_dir),
        other => Err(Error::Usage(format!("unknown command `{other}`"))),
    }
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{key}` must be set for this command")))
}

fn bank_from_examples(cfg: &RunConfig, examples: &[PassageExample]) -> Result<EmbeddingBank> {
    let (pos_tags, ner_tags) = match &cfg.data_tags {
        Some(path) => load_tag_indices(path)?,
        None => (
            TagIndex::from_tags(
                examples
                    .iter()
                    .flat_map(|e| e.pos.iter().map(String::as_str)),
            ),
            TagIndex::from_tags(
                examples
                    .iter()
                    .flat_map(|e| e.ner.iter().map(String::as_str)),
            ),
        ),
    };
    let mut bank = EmbeddingBank::new(cfg.model_embed_dim, pos_tags, ner_tags);
    if let Some(path) = &cfg.data_contextual {
        bank.set_contextual(load_contextual(path)?)?;
    }
    Ok(bank)
}

fn glove_table(cfg: &RunConfig, vocab: &Vocabulary) -> Result<RealArray<f32>> {
    let rng = SeededRng::new(cfg.seed).fork("glove");
    match &cfg.data_glove {
        Some(path) => {
            let table = load_glove(path, vocab, &rng)?;
            if table.rows() != cfg.model_embed_dim {
                return Err(Error::Config(format!(
                    "embedding file is {}-dimensional but model.embed_dim = {}",
                    table.rows(),
                    cfg.model_embed_dim
                )));
            }
            Ok(table)
        }
        None => Ok(random_embeddings(vocab, cfg.model_embed_dim, &rng)),
    }
}

fn cmd_build_vocab(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let train = load_dataset(require(&cfg.data_train, "data.train")?)?;
    let vocab = build_vocab(&train, cfg.vocab_max_size)?;
    let path = out_dir.join("vocab.txt");
    vocab.save(&path)?;
    println!(
        "{}",
        serde_json::json!({"vocab_file": path, "tokens": vocab.len()})
    );
    Ok(())
}

struct TrainSetup {
    vocab: Vocabulary,
    bank: EmbeddingBank,
    model: QgModel,
    train: Vec<PassageExample>,
    dev: Vec<PassageExample>,
}

fn setup_training(cfg: &RunConfig, out_dir: &Path) -> Result<TrainSetup> {
    let train = load_dataset(require(&cfg.data_train, "data.train")?)?;
    let dev = match &cfg.data_dev {
        Some(path) => load_dataset(path)?,
        None => train.clone(),
    };
    let vocab = match &cfg.data_vocab {
        Some(path) => Vocabulary::load(path)?,
        None => {
            let vocab = build_vocab(&train, cfg.vocab_max_size)?;
            vocab.save(out_dir.join("vocab.txt"))?;
            vocab
        }
    };
    let bank = bank_from_examples(cfg, &train)?;
    if cfg.data_tags.is_none() {
        save_tag_indices(&bank, out_dir.join("tags.json"))?;
    }
    let model = QgModel::new(cfg.model_config(), vocab.len(), &bank)?;
    Ok(TrainSetup {
        vocab,
        bank,
        model,
        train,
        dev,
    })
}

fn cmd_train(cfg: &RunConfig, out_dir: &Path, stage: Stage) -> Result<()> {
    let setup = setup_training(cfg, out_dir)?;
    let (mut store, mut opt) = match stage {
        Stage::Pretrain => {
            let glove = glove_table(cfg, &setup.vocab)?;
            (
                setup.model.init_params(glove, cfg.seed)?,
                OptimizerState::default(),
            )
        }
        Stage::Finetune => {
            // Fine-tuning starts from a pretraining checkpoint.
            let ckpt = load_checkpoint(require(&cfg.data_checkpoint, "data.checkpoint")?)?;
            if ckpt.config_hash != cfg.hash() {
                eprintln!(
                    "warning: checkpoint config hash {:016x} differs from current {:016x}",
                    ckpt.config_hash,
                    cfg.hash()
                );
            }
            (ckpt.params, ckpt.optimizer.unwrap_or_default())
        }
    };
    let trainer = Trainer::new(&setup.model, &setup.vocab, &setup.bank, cfg.loss_config())?;
    let (log_name, ckpt_name) = match stage {
        Stage::Pretrain => ("train_log.jsonl", "checkpoint_best.g2s"),
        Stage::Finetune => ("finetune_log.jsonl", "checkpoint_finetuned.g2s"),
    };
    let ckpt_path = out_dir.join(ckpt_name);
    let outcome = trainer.fit(
        &mut store,
        &mut opt,
        &setup.train,
        &setup.dev,
        stage,
        cfg.seed,
        Some(&out_dir.join(log_name)),
        Some(&ckpt_path),
        cfg.hash(),
    )?;
    println!(
        "{}",
        serde_json::json!({
            "stage": stage.as_str(),
            "epochs": outcome.records.len(),
            "best_val_bleu4": outcome.best_val_bleu4,
            "checkpoint": ckpt_path,
        })
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Prediction {
    id: String,
    question_tokens: Vec<String>,
}

fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let test = load_dataset(require(&cfg.data_test, "data.test")?)?;
    let vocab = Vocabulary::load(require(&cfg.data_vocab, "data.vocab")?)?;
    let (pos_tags, ner_tags) = load_tag_indices(require(&cfg.data_tags, "data.tags")?)?;
    let mut bank = EmbeddingBank::new(cfg.model_embed_dim, pos_tags, ner_tags);
    if let Some(path) = &cfg.data_contextual {
        bank.set_contextual(load_contextual(path)?)?;
    }
    let ckpt = load_checkpoint(require(&cfg.data_checkpoint, "data.checkpoint")?)?;
    if ckpt.config_hash != cfg.hash() {
        eprintln!(
            "warning: checkpoint config hash {:016x} differs from current {:016x}",
            ckpt.config_hash,
            cfg.hash()
        );
    }
    let model = QgModel::new(cfg.model_config(), vocab.len(), &bank)?;
    let path = out_dir.join("predictions.jsonl");
    let mut file = std::fs::File::create(&path)?;
    for ex in &test {
        let question_tokens = model.generate(
            &ckpt.params,
            &vocab,
            &bank,
            ex,
            cfg.decode_beam_width,
            cfg.decode_max_len,
        )?;
        let record = Prediction {
            id: ex.id.clone(),
            question_tokens,
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    println!(
        "{}",
        serde_json::json!({"predictions": path, "n": test.len()})
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let gold = load_dataset(require(&cfg.data_test, "data.test")?)?;
    let text = std::fs::read_to_string(require(&cfg.data_predictions, "data.predictions")?)?;
    let mut predictions: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no + 1,
            message: e.to_string(),
        })?;
        predictions.insert(p.id, p.question_tokens);
    }
    let mut pairs = Vec::new();
    for ex in &gold {
        let Some(reference) = &ex.question_tokens else {
            return Err(Error::Validation {
                example_id: ex.id.clone(),
                field: "question_tokens",
                message: "evaluation requires gold questions".into(),
            });
        };
        let Some(candidate) = predictions.get(&ex.id) else {
            return Err(Error::Config(format!(
                "no prediction for example `{}`",
                ex.id
            )));
        };
        pairs.push((candidate.clone(), reference.clone()));
    }
    let report = evaluate_corpus(&pairs)?;
    let rendered = serde_json::to_string(&report)?;
    std::fs::write(out_dir.join("metrics.json"), &rendered)?;
    println!("{rendered}");
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> Result<()> {
    let mut worst = GradCheckReport::default();
    for (name, report) in check_all_primitives(cfg.gradcheck_points, cfg.gradcheck_step, cfg.seed)?
    {
        if report.max_rel_error > worst.max_rel_error {
            worst.worst_coordinate = Some((format!("primitive/{name}"), 0));
            worst.max_rel_error = report.max_rel_error;
        }
        worst.checked += report.checked;
        worst.skipped += report.skipped;
    }

    // End-to-end check of the stage-1 loss on the fixture examples.
    let train = load_dataset(require(&cfg.data_train, "data.train")?)?;
    let examples = &train[..train.len().min(2)];
    let vocab = build_vocab(&train, cfg.vocab_max_size)?;
    let bank = bank_from_examples(cfg, &train)?;
    let model = QgModel::new(cfg.model_config(), vocab.len(), &bank)?;
    let store = model
        .init_params(glove_table(cfg, &vocab)?, cfg.seed)?
        .to_f64();
    let ext = crate::corpus::extend_vocab(&examples.iter().collect::<Vec<_>>(), &vocab);
    let report = grad_check(&store, cfg.gradcheck_step, |tape, params| {
        let mut rng = SeededRng::new(0);
        let mut loss = tape.zeros(1, 1);
        for ex in examples {
            let encoded = model.encode(tape, params, &vocab, &bank, ex, false, &mut rng)?;
            let (ctx, state) = model.decode_context(params, &encoded, &vocab, &ext, ex)?;
            let (example_loss, _) = model.stage1_loss(
                params,
                &ctx,
                state,
                &vocab,
                &ext,
                ex,
                cfg.loss_lambda,
                1.0,
                &mut rng,
            )?;
            loss = loss.add(&example_loss)?;
        }
        Ok(loss)
    })?;
    if report.max_rel_error > worst.max_rel_error {
        worst.worst_coordinate = report.worst_coordinate.clone();
        worst.max_rel_error = report.max_rel_error;
    }
    worst.checked += report.checked;
    worst.skipped += report.skipped;

    println!(
        "{}",
        serde_json::json!({
            "max_rel_error": worst.max_rel_error,
            "checked": worst.checked,
            "skipped": worst.skipped,
            "worst": worst.worst_coordinate.as_ref().map(|(n, i)| format!("{n}[{i}]")),
            "tolerance": cfg.gradcheck_tolerance,
        })
    );
    if worst.max_rel_error > cfg.gradcheck_tolerance {
        return Err(Error::Numeric("gradient check exceeded tolerance"));
    }
    Ok(())
}

fn cmd_hop_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let setup_cfg = cfg.clone();
    let mut rows = Vec::new();
    for hops in cfg.sweep_min_hops..=cfg.sweep_max_hops {
        let mut run_cfg = setup_cfg.clone();
        run_cfg.gnn_hops = hops;
        let setup = setup_training(&run_cfg, out_dir)?;
        let glove = glove_table(&run_cfg, &setup.vocab)?;
        let mut store = setup.model.init_params(glove, run_cfg.seed)?;
        let mut opt = OptimizerState::default();
        let trainer = Trainer::new(
            &setup.model,
            &setup.vocab,
            &setup.bank,
            run_cfg.loss_config(),
        )?;
        let outcome = trainer.fit(
            &mut store,
            &mut opt,
            &setup.train,
            &setup.dev,
            Stage::Pretrain,
            run_cfg.seed,
            None,
            None,
            run_cfg.hash(),
        )?;
        println!("hops {hops}: val BLEU-4 {:.4}", outcome.best_val_bleu4);
        rows.push(serde_json::json!({"hops": hops, "val_bleu4": outcome.best_val_bleu4}));
    }
    let rendered = serde_json::to_string_pretty(&rows)?;
    std::fs::write(out_dir.join("hop_sweep.json"), &rendered)?;
    Ok(())
}
