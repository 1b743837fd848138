//! Deep Alignment Network: answer-aware passage embedding by soft
//! alignment at the word level and again at the contextualized hidden
//! level, each stage owning its own score weight.

use crate::error::{Error, Result};
use crate::gradcore::BoundParams;
use crate::gradcore::{variational_dropout, BiLstmParamNames, ParameterStore, Real, Var};
use crate::rng::SeededRng;

/// Sizes and switches the alignment stack is built from.
#[derive(Debug, Clone)]
pub struct DanConfig {
    /// Word embedding width F.
    pub embed_dim: usize,
    /// Hidden width; BiLSTMs use half per direction.
    pub hidden_dim: usize,
    /// Linguistic feature width (case + POS + NER embeddings).
    pub feature_dim: usize,
    /// Contextual sidecar widths, 0 when absent.
    pub ctx_passage_dim: usize,
    pub ctx_answer_dim: usize,
    /// With alignment off, the passage is contextualized without any
    /// answer information (the ablated encoder).
    pub enabled: bool,
    pub dropout_embed: f64,
    pub dropout_rnn: f64,
}

impl DanConfig {
    /// Width of the word-level passage side [G^p; B^p; L^p].
    pub fn word_passage_dim(&self) -> usize {
        self.embed_dim + self.ctx_passage_dim + self.feature_dim
    }

    /// Width of the word-stage aligned output H̃^p.
    pub fn word_aligned_dim(&self) -> usize {
        if self.enabled {
            self.word_passage_dim() + self.embed_dim
        } else {
            self.word_passage_dim()
        }
    }

    fn hidden_score_dim(&self) -> Result<usize> {
        if self.ctx_passage_dim != self.ctx_answer_dim {
            return Err(Error::Config(format!(
                "hidden-level alignment shares one score weight; contextual dims must match ({} vs {})",
                self.ctx_passage_dim, self.ctx_answer_dim
            )));
        }
        Ok(self.embed_dim + self.ctx_passage_dim + self.hidden_dim)
    }
}

#[derive(Debug, Clone)]
pub struct DanParamNames {
    pub word_align_w: String,
    pub hidden_align_w: String,
    pub ctx_passage: BiLstmParamNames,
    pub ctx_answer: BiLstmParamNames,
    pub output: BiLstmParamNames,
}

impl DanParamNames {
    pub fn new(hidden_dim: usize) -> Self {
        DanParamNames {
            word_align_w: "dan/word/align_w".into(),
            hidden_align_w: "dan/hidden/align_w".into(),
            ctx_passage: BiLstmParamNames::new("dan/ctx_p", hidden_dim / 2),
            ctx_answer: BiLstmParamNames::new("dan/ctx_a", hidden_dim / 2),
            output: BiLstmParamNames::new("dan/out", hidden_dim / 2),
        }
    }

    pub fn register<T: Real>(
        &self,
        store: &mut ParameterStore<T>,
        cfg: &DanConfig,
        rng: &mut SeededRng,
    ) -> Result<()> {
        if !cfg.hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden_dim must be even for a bidirectional split, got {}",
                cfg.hidden_dim
            )));
        }
        if cfg.enabled {
            store.insert_init(&self.word_align_w, cfg.hidden_dim, cfg.embed_dim, rng);
            store.insert_init(
                &self.hidden_align_w,
                cfg.hidden_dim,
                cfg.hidden_score_dim()?,
                rng,
            );
            self.ctx_passage
                .register(store, cfg.word_aligned_dim(), rng);
            self.ctx_answer
                .register(store, cfg.embed_dim + cfg.ctx_answer_dim, rng);
            self.output.register(store, 2 * cfg.hidden_dim, rng);
        } else {
            self.output.register(store, cfg.word_aligned_dim(), rng);
        }
        Ok(())
    }
}

/// Raw embedding blocks for one example, columns per token.
pub struct DanInputs<T: Real> {
    /// Fixed word vectors of the passage, F×N.
    pub gp: Var<T>,
    /// Fixed word vectors of the answer, F×L.
    pub ga: Var<T>,
    /// Linguistic feature embeddings of the passage, feature_dim×N.
    pub lp: Var<T>,
    /// Contextual sidecar matrices, if present.
    pub bp: Option<Var<T>>,
    pub ba: Option<Var<T>>,
}

pub struct DanOutput<T: Real> {
    /// Final passage embedding X, hidden_dim×N.
    pub x: Var<T>,
    /// Word-stage aligned passage H̃^p (input to dynamic graphs).
    pub word_aligned: Var<T>,
    /// Word-stage attention (N×L, rows sum to 1).
    pub word_beta: Option<Var<T>>,
    /// Hidden-stage attention (N×L, rows sum to 1).
    pub hidden_beta: Option<Var<T>>,
}

/// Soft alignment: β ∝ exp(ReLU(W·Xp)ᵀ · ReLU(W·Xa)) row-normalized over
/// answer positions; output CAT(X̃p; X̃a·βᵀ).
pub fn align<T: Real>(
    xp: &Var<T>,
    xa: &Var<T>,
    xp_tilde: &Var<T>,
    xa_tilde: &Var<T>,
    w: &Var<T>,
) -> Result<(Var<T>, Var<T>)> {
    if xp.cols() == 0 || xa.cols() == 0 {
        return Err(Error::EmptyInput(
            "align requires nonempty passage and answer",
        ));
    }
    let projected_p = w.matmul(xp)?.relu()?;
    let projected_a = w.matmul(xa)?.relu()?;
    let scores = projected_p.matmul_tn(&projected_a)?; // N×L
    let beta = scores.masked_softmax(1, None)?;
    let answer_summary = xa_tilde.matmul_nt(&beta)?; // F̃a×N
    let tape = xp.tape().clone();
    let aligned = tape.concat(0, &[xp_tilde, &answer_summary])?;
    Ok((aligned, beta))
}

/// Contextualize a feature sequence with a BiLSTM (the per-direction
/// hidden size is half the output width).
pub fn contextualize<T: Real>(
    names: &BiLstmParamNames,
    params: &BoundParams<T>,
    input: &Var<T>,
) -> Result<Var<T>> {
    names.run(params, input)
}

/// Full two-stage alignment returning the final passage embedding X.
#[allow(clippy::too_many_arguments)]
pub fn dan_forward<T: Real>(
    names: &DanParamNames,
    params: &BoundParams<T>,
    cfg: &DanConfig,
    inputs: &DanInputs<T>,
    training: bool,
    rng: &mut SeededRng,
) -> Result<DanOutput<T>> {
    let tape = inputs.gp.tape().clone();
    let drop_embed = |v: &Var<T>, rng: &mut SeededRng| -> Result<Var<T>> {
        variational_dropout(v, cfg.dropout_embed, training, rng)
    };
    let drop_rnn = |v: &Var<T>, rng: &mut SeededRng| -> Result<Var<T>> {
        variational_dropout(v, cfg.dropout_rnn, training, rng)
    };

    // Word-level passage block [G^p; B^p; L^p].
    let mut passage_parts: Vec<&Var<T>> = vec![&inputs.gp];
    if let Some(bp) = &inputs.bp {
        passage_parts.push(bp);
    }
    passage_parts.push(&inputs.lp);
    let passage_block = tape.concat(0, &passage_parts)?;

    if !cfg.enabled {
        let dropped = drop_embed(&passage_block, rng)?;
        let x = drop_rnn(&contextualize(&names.output, params, &dropped)?, rng)?;
        return Ok(DanOutput {
            x,
            word_aligned: passage_block,
            word_beta: None,
            hidden_beta: None,
        });
    }

    // Word-level stage: align on fixed word vectors only.
    let word_w = params.get(&names.word_align_w)?;
    let (word_aligned, word_beta) =
        align(&inputs.gp, &inputs.ga, &passage_block, &inputs.ga, word_w)?;
    let word_dropped = drop_embed(&word_aligned, rng)?;
    let ctx_passage = drop_rnn(
        &contextualize(&names.ctx_passage, params, &word_dropped)?,
        rng,
    )?;

    // Answer side: [G^a; B^a] contextualized.
    let answer_block = match &inputs.ba {
        Some(ba) => tape.concat(0, &[&inputs.ga, ba])?,
        None => inputs.ga.clone(),
    };
    let answer_dropped = drop_embed(&answer_block, rng)?;
    let ctx_answer = drop_rnn(
        &contextualize(&names.ctx_answer, params, &answer_dropped)?,
        rng,
    )?;

    // Hidden-level stage: scores over [G; B; H̄] on both sides, aligned
    // matrices are the contextualized embeddings themselves.
    let hidden_xp = {
        let mut parts: Vec<&Var<T>> = vec![&inputs.gp];
        if let Some(bp) = &inputs.bp {
            parts.push(bp);
        }
        parts.push(&ctx_passage);
        tape.concat(0, &parts)?
    };
    let hidden_xa = {
        let mut parts: Vec<&Var<T>> = vec![&inputs.ga];
        if let Some(ba) = &inputs.ba {
            parts.push(ba);
        }
        parts.push(&ctx_answer);
        tape.concat(0, &parts)?
    };
    let hidden_w = params.get(&names.hidden_align_w)?;
    let (hidden_aligned, hidden_beta) =
        align(&hidden_xp, &hidden_xa, &ctx_passage, &ctx_answer, hidden_w)?;
    let x = drop_rnn(&contextualize(&names.output, params, &hidden_aligned)?, rng)?;

    Ok(DanOutput {
        x,
        word_aligned,
        word_beta: Some(word_beta),
        hidden_beta: Some(hidden_beta),
    })
}
