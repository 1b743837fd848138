//! Losses, schedules, optimizer and the two-stage training loop:
//! cross-entropy pretraining, then fine-tuning on
//! ℒ = γ·ℒ_rl + (1−γ)·ℒ_lm with a self-critical RL term.

mod adam;
mod checkpoint;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use checkpoint::{
    load_checkpoint, read_container, save_checkpoint, write_container, Checkpoint,
};

use crate::corpus::{extend_vocab, EmbeddingBank, PassageExample, Vocabulary};
use crate::decoder::SampleMode;
use crate::error::{Error, Result};
use crate::gradcore::{ParameterStore, Real, Tape, Var};
use crate::model::{embedding_fn, QgModel, PROB_FLOOR};
use crate::rewards::total_reward;
use crate::rng::SeededRng;
use serde::Serialize;
use std::io::Write as _;
use std::path::Path;

/// Loss weights and schedule constants. Defaults are the published
/// working configuration.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Coverage loss ratio λ.
    pub lambda: f64,
    /// Mixing factor γ between RL and cross-entropy losses.
    pub gamma: f64,
    /// Semantic reward scalar α.
    pub alpha: f64,
    pub tf_base: f64,
    pub tf_decay: f64,
    pub clip_norm: f64,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub max_decode_len: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.4,
            gamma: 0.99,
            alpha: 0.1,
            tf_base: 0.75,
            tf_decay: 0.9999,
            clip_norm: 10.0,
            lr_pretrain: 0.001,
            lr_finetune: 0.00001,
            plateau_factor: 0.5,
            plateau_patience: 3,
            early_stop: 10,
            batch_size: 8,
            max_epochs: 100,
            max_decode_len: 30,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "loss.gamma must be in [0,1], got {}",
                self.gamma
            )));
        }
        if self.lambda < 0.0 || self.alpha < 0.0 {
            return Err(Error::Config(
                "loss.lambda and loss.alpha must be nonnegative".into(),
            ));
        }
        if self.lr_pretrain < 0.0 || self.lr_finetune < 0.0 {
            return Err(Error::Config("learning rates must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_decode_len == 0 {
            return Err(Error::Config(
                "batch size and decode length must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

/// Scheduled teacher forcing probability at training step `i`:
/// p = base · decay^i, decaying toward feeding the model its own argmax.
pub fn teacher_forcing_prob(base: f64, decay: f64, step: u64) -> f64 {
    base * decay.powf(step as f64)
}

/// ℒ_lm for one sequence: Σ_t −log P(y*_t) + λ·covloss_t over recorded
/// (distribution, coverage-loss) steps. Gold probabilities are floored
/// at 1e-12 before the log; the floored count is reported.
pub fn lm_loss_terms<T: Real>(
    steps: &[(Var<T>, Var<T>)],
    targets: &[usize],
    lambda: f64,
) -> Result<(Var<T>, usize)> {
    if steps.len() != targets.len() || steps.is_empty() {
        return Err(Error::Config(format!(
            "lm_loss got {} steps for {} targets",
            steps.len(),
            targets.len()
        )));
    }
    let tape = steps[0].0.tape().clone();
    let floor = tape.scalar(T::from_f64(-PROB_FLOOR));
    let mut loss = tape.zeros(1, 1);
    let mut floored = 0usize;
    for ((dist, covloss), &target) in steps.iter().zip(targets) {
        let p = dist.gather_rows(&[target])?;
        if p.item().to_f64() < PROB_FLOOR {
            floored += 1;
        }
        let clamped = p.scale(-T::one())?.min(&floor)?.scale(-T::one())?;
        let nll = clamped.log()?.scale(-T::one())?;
        loss = loss.add(&nll)?.add(&covloss.scale(T::from_f64(lambda))?)?;
    }
    Ok((loss, floored))
}

/// ℒ_rl = (r(Ŷ) − r(Y^s)) · Σ_t log P(y^s_t): the reward gap is a
/// constant; gradients flow only through the log-probabilities.
pub fn rl_loss_term<T: Real>(
    sampled_log_prob: &Var<T>,
    reward_greedy: f64,
    reward_sampled: f64,
) -> Result<Var<T>> {
    sampled_log_prob.scale(T::from_f64(reward_greedy - reward_sampled))
}

/// ℒ = γ·ℒ_rl + (1−γ)·ℒ_lm.
pub fn mixed_loss<T: Real>(rl: &Var<T>, lm: &Var<T>, gamma: f64) -> Result<Var<T>> {
    rl.scale(T::from_f64(gamma))?
        .add(&lm.scale(T::from_f64(1.0 - gamma))?)
}

/// Per-example record of one self-critical step, for the sign property
/// sign(ℒ_rl) = sign(r(Y^s) − r(Ŷ)) whenever Σ log P < 0.
#[derive(Debug, Clone, Serialize)]
pub struct RlStepStats {
    pub reward_greedy: f64,
    pub reward_sampled: f64,
    pub sum_log_prob: f64,
    pub rl_loss: f64,
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_bleu4: f64,
    pub lr: f64,
    pub stage: &'static str,
}

/// Plateau learning-rate reduction plus early stopping on a validation
/// score (higher is better). Strict improvement resets both counters.
pub struct PlateauController {
    pub best: f64,
    pub lr: f64,
    factor: f64,
    patience: usize,
    early_stop: usize,
    stale_for_reduction: usize,
    stale_total: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub struct PlateauDecision {
    pub improved: bool,
    pub reduced: bool,
    pub stop: bool,
}

impl PlateauController {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, early_stop: usize) -> Self {
        PlateauController {
            best: f64::NEG_INFINITY,
            lr: initial_lr,
            factor,
            patience,
            early_stop,
            stale_for_reduction: 0,
            stale_total: 0,
        }
    }

    pub fn observe(&mut self, score: f64) -> PlateauDecision {
        if score > self.best {
            self.best = score;
            self.stale_for_reduction = 0;
            self.stale_total = 0;
            return PlateauDecision {
                improved: true,
                reduced: false,
                stop: false,
            };
        }
        self.stale_for_reduction += 1;
        self.stale_total += 1;
        let mut reduced = false;
        if self.stale_for_reduction >= self.patience {
            self.lr *= self.factor;
            self.stale_for_reduction = 0;
            reduced = true;
        }
        PlateauDecision {
            improved: false,
            reduced,
            stop: self.stale_total >= self.early_stop,
        }
    }
}

/// Epoch-level training outcome.
pub struct FitOutcome {
    pub records: Vec<EpochRecord>,
    pub best_val_bleu4: f64,
    pub best_params: ParameterStore<f32>,
    pub rl_stats: Vec<RlStepStats>,
}

/// Bundles the model with its corpus context so the loop signatures stay
/// readable.
pub struct Trainer<'a> {
    pub model: &'a QgModel,
    pub vocab: &'a Vocabulary,
    pub bank: &'a EmbeddingBank,
    pub cfg: LossConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a QgModel,
        vocab: &'a Vocabulary,
        bank: &'a EmbeddingBank,
        cfg: LossConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            model,
            vocab,
            bank,
            cfg,
        })
    }

    /// Mean stage-appropriate loss over one batch, backpropagated and
    /// applied as a single optimizer step.
    #[allow(clippy::too_many_arguments)]
    fn batch_step(
        &self,
        store: &mut ParameterStore<f32>,
        opt: &mut OptimizerState,
        batch: &[&PassageExample],
        stage: Stage,
        lr: f64,
        global_step: u64,
        rng: &mut SeededRng,
        rl_stats: &mut Vec<RlStepStats>,
    ) -> Result<f64> {
        let tape = Tape::<f32>::new();
        let params = store.bind(&tape);
        let ext = extend_vocab(batch, self.vocab);
        let tf_prob = teacher_forcing_prob(self.cfg.tf_base, self.cfg.tf_decay, global_step);
        // The embedding closure borrows the store; everything loss-side
        // lives in this block so the optimizer can mutate afterwards.
        let (mean_value, by_name) = {
            let embed = embedding_fn(store, self.vocab)?;

            let mut total = tape.zeros(1, 1);
            for ex in batch {
                let encoded = self
                    .model
                    .encode(&tape, &params, self.vocab, self.bank, ex, true, rng)?;
                let (ctx, state) = self
                    .model
                    .decode_context(&params, &encoded, self.vocab, &ext, ex)?;
                let lm = {
                    let (loss, _) = self.model.stage1_loss(
                        &params,
                        &ctx,
                        state.clone(),
                        self.vocab,
                        &ext,
                        ex,
                        self.cfg.lambda,
                        tf_prob,
                        rng,
                    )?;
                    loss
                };
                let example_loss = match stage {
                    Stage::Pretrain => lm,
                    Stage::Finetune => {
                        let gold =
                            ex.question_tokens
                                .as_ref()
                                .ok_or_else(|| Error::Validation {
                                    example_id: ex.id.clone(),
                                    field: "question_tokens",
                                    message: "fine-tuning requires gold questions".into(),
                                })?;
                        let greedy = self.model.sample(
                            &params,
                            &ctx,
                            state.clone(),
                            SampleMode::Greedy,
                            self.cfg.max_decode_len,
                            rng,
                        )?;
                        let sampled = self.model.sample(
                            &params,
                            &ctx,
                            state,
                            SampleMode::Multinomial,
                            self.cfg.max_decode_len,
                            rng,
                        )?;
                        let greedy_words = self.model.surfaces(greedy.words(), self.vocab, &ext);
                        let sampled_words = self.model.surfaces(sampled.words(), self.vocab, &ext);
                        let r_greedy = total_reward(&greedy_words, gold, &embed, self.cfg.alpha)?;
                        let r_sampled = total_reward(&sampled_words, gold, &embed, self.cfg.alpha)?;
                        let rl =
                            rl_loss_term(&sampled.log_prob_sum, r_greedy.total, r_sampled.total)?;
                        rl_stats.push(RlStepStats {
                            reward_greedy: r_greedy.total,
                            reward_sampled: r_sampled.total,
                            sum_log_prob: sampled.log_prob_sum.item().into(),
                            rl_loss: rl.item().into(),
                        });
                        mixed_loss(&rl, &lm, self.cfg.gamma)?
                    }
                };
                total = total.add(&example_loss)?;
            }
            let mean = total.scale(1.0f32 / batch.len() as f32)?;
            let grads = tape.backward(&mean)?;
            (f64::from(mean.item()), params.collect_grads(&grads))
        };
        adam_step(store, &by_name, opt, lr, self.cfg.clip_norm)?;
        Ok(mean_value)
    }

    /// One pass over the training set in seeded-shuffled batches.
    #[allow(clippy::too_many_arguments)]
    pub fn train_epoch(
        &self,
        store: &mut ParameterStore<f32>,
        opt: &mut OptimizerState,
        examples: &[PassageExample],
        stage: Stage,
        lr: f64,
        epoch: usize,
        global_step: &mut u64,
        base_rng: &SeededRng,
        rl_stats: &mut Vec<RlStepStats>,
    ) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng = base_rng.fork(&format!("shuffle/{epoch}"));
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.below(i + 1));
        }
        let mut step_rng = base_rng.fork(&format!("steps/{epoch}"));
        let mut losses = Vec::new();
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&PassageExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let loss = self.batch_step(
                store,
                opt,
                &batch,
                stage,
                lr,
                *global_step,
                &mut step_rng,
                rl_stats,
            )?;
            losses.push(loss);
            *global_step += 1;
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Corpus BLEU-4 of greedy decodes against gold questions.
    pub fn validation_bleu(
        &self,
        store: &ParameterStore<f32>,
        examples: &[PassageExample],
    ) -> Result<f64> {
        let mut pairs = Vec::new();
        for ex in examples {
            let Some(gold) = ex.question_tokens.clone() else {
                continue;
            };
            let decoded = self.model.generate(
                store,
                self.vocab,
                self.bank,
                ex,
                1,
                self.cfg.max_decode_len,
            )?;
            pairs.push((decoded, gold));
        }
        if pairs.is_empty() {
            return Err(Error::Config("validation set has no gold questions".into()));
        }
        crate::rewards::corpus_bleu4(&pairs)
    }

    /// Epoch loop with per-epoch validation BLEU-4, plateau learning-rate
    /// reduction, early stopping, best-checkpoint retention and JSONL
    /// logging.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        &self,
        store: &mut ParameterStore<f32>,
        opt: &mut OptimizerState,
        train: &[PassageExample],
        dev: &[PassageExample],
        stage: Stage,
        seed: u64,
        log_path: Option<&Path>,
        checkpoint_path: Option<&Path>,
        config_hash: u64,
    ) -> Result<FitOutcome> {
        if train.is_empty() {
            return Err(Error::Config("fit: dataset is empty".into()));
        }
        let initial_lr = match stage {
            Stage::Pretrain => self.cfg.lr_pretrain,
            Stage::Finetune => self.cfg.lr_finetune,
        };
        let mut plateau = PlateauController::new(
            initial_lr,
            self.cfg.plateau_factor,
            self.cfg.plateau_patience,
            self.cfg.early_stop,
        );
        let base_rng = SeededRng::new(seed).fork(stage.as_str());
        let mut log_file = match log_path {
            Some(p) => Some(std::fs::File::create(p)?),
            None => None,
        };
        let mut records = Vec::new();
        let mut rl_stats = Vec::new();
        let mut best_params = store.clone();
        let mut global_step = 0u64;

        for epoch in 1..=self.cfg.max_epochs {
            let lr = plateau.lr;
            let train_loss = self.train_epoch(
                store,
                opt,
                train,
                stage,
                lr,
                epoch,
                &mut global_step,
                &base_rng,
                &mut rl_stats,
            )?;
            let val_bleu4 = self.validation_bleu(store, dev)?;
            let record = EpochRecord {
                epoch,
                train_loss,
                val_bleu4,
                lr,
                stage: stage.as_str(),
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&record)?)?;
            }
            records.push(record);

            let decision = plateau.observe(val_bleu4);
            if decision.improved {
                best_params = store.clone();
                if let Some(path) = checkpoint_path {
                    save_checkpoint(path, &best_params, Some(opt), config_hash)?;
                }
            }
            if decision.stop {
                break;
            }
        }
        if checkpoint_path.is_some() && plateau.best == f64::NEG_INFINITY {
            return Err(Error::Config("no epochs ran".into()));
        }
        Ok(FitOutcome {
            records,
            best_val_bleu4: plateau.best,
            best_params,
            rl_stats,
        })
    }
}
