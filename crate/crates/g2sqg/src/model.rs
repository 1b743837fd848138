//! Whole-model assembly: embeddings → alignment → passage graph →
//! graph encoder → copy/coverage decoder, over one parameter store.

use crate::biggnn::{self, BiggnnParamNames, DirectionOrder, GraphRef};
use crate::corpus::{
    EmbeddingBank, ExtendedVocab, PassageExample, Vocabulary, CASE_DIM, EOS, NER_DIM, POS_DIM, SOS,
    UNK,
};
use crate::dan::{dan_forward, DanConfig, DanInputs, DanOutput, DanParamNames};
use crate::decoder::{
    beam_search, decode_step, sample_sequence, DecodeContext, DecoderParamNames, DecoderState,
    SampleMode, SampledSequence,
};
use crate::error::{Error, Result};
use crate::gradcore::{BoundParams, ParameterStore, Real, RealArray, Tape, Var};
use crate::rng::SeededRng;
use crate::textgraph::{
    build_static_graph, dynamic_adjacency, sparsify_normalize, DynamicGraph, GraphKind,
};

pub const GLOVE_PARAM: &str = "embed/glove";
pub const CASE_PARAM: &str = "embed/case";
pub const POS_PARAM: &str = "embed/pos";
pub const NER_PARAM: &str = "embed/ner";
pub const DYN_U_PARAM: &str = "graph/dyn_u";

/// Probability floor applied to gold-token likelihoods before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Architecture switches and sizes, fixed per run.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub hops: usize,
    pub knn_k: usize,
    pub graph_kind: GraphKind,
    pub direction_order: DirectionOrder,
    pub dan_enabled: bool,
    pub dropout_embed: f64,
    pub dropout_rnn: f64,
}

pub struct QgModel {
    pub cfg: ModelConfig,
    pub dan_cfg: DanConfig,
    pub dan: DanParamNames,
    pub gnn: BiggnnParamNames,
    pub dec: DecoderParamNames,
    pub vocab_size: usize,
    pub pos_table_len: usize,
    pub ner_table_len: usize,
}

/// Encoder outputs for one example.
pub struct EncodedExample<T: Real> {
    pub memory: Var<T>,
    pub graph_embedding: Var<T>,
    pub init_cell: Var<T>,
    pub init_state: Var<T>,
    pub dan: DanOutput<T>,
    pub dynamic_graph: Option<DynamicGraph<T>>,
}

/// Teacher-forced loss bookkeeping for one example.
pub struct Stage1Stats {
    pub steps: usize,
    pub floored_targets: usize,
    pub loss_value: f64,
}

impl QgModel {
    pub fn new(cfg: ModelConfig, vocab_size: usize, bank: &EmbeddingBank) -> Result<QgModel> {
        if !cfg.hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.hidden_dim must be even, got {}",
                cfg.hidden_dim
            )));
        }
        let dan_cfg = DanConfig {
            embed_dim: cfg.embed_dim,
            hidden_dim: cfg.hidden_dim,
            feature_dim: CASE_DIM + POS_DIM + NER_DIM,
            ctx_passage_dim: bank.ctx_passage_dim,
            ctx_answer_dim: bank.ctx_answer_dim,
            enabled: cfg.dan_enabled,
            dropout_embed: cfg.dropout_embed,
            dropout_rnn: cfg.dropout_rnn,
        };
        Ok(QgModel {
            dan: DanParamNames::new(cfg.hidden_dim),
            gnn: BiggnnParamNames::new(),
            dec: DecoderParamNames::new(),
            dan_cfg,
            cfg,
            vocab_size,
            pos_table_len: bank.pos_tags.len(),
            ner_table_len: bank.ner_tags.len(),
        })
    }

    /// Register and initialize every parameter. `glove` is the fixed
    /// embed_dim × |V| word table.
    pub fn init_params(&self, glove: RealArray<f32>, seed: u64) -> Result<ParameterStore<f32>> {
        if glove.shape() != [self.cfg.embed_dim, self.vocab_size] {
            return Err(Error::Shape {
                op: "init_params glove table",
                lhs: glove.shape().to_vec(),
                rhs: vec![self.cfg.embed_dim, self.vocab_size],
            });
        }
        let mut rng = SeededRng::new(seed).fork("init");
        let mut store = ParameterStore::new();
        store.insert_fixed(GLOVE_PARAM, glove);
        store.insert_init(CASE_PARAM, CASE_DIM, 3, &mut rng);
        store.insert_init(POS_PARAM, POS_DIM, self.pos_table_len, &mut rng);
        store.insert_init(NER_PARAM, NER_DIM, self.ner_table_len, &mut rng);
        self.dan.register(&mut store, &self.dan_cfg, &mut rng)?;
        if self.cfg.graph_kind == GraphKind::Dynamic {
            store.insert_init(
                DYN_U_PARAM,
                self.cfg.hidden_dim,
                self.dan_cfg.word_aligned_dim(),
                &mut rng,
            );
        }
        self.gnn.register(&mut store, self.cfg.hidden_dim, &mut rng);
        self.dec.register(
            &mut store,
            self.cfg.hidden_dim,
            self.cfg.embed_dim,
            self.vocab_size,
            &mut rng,
        );
        Ok(store)
    }

    fn embed_tokens<T: Real>(
        &self,
        params: &BoundParams<T>,
        vocab: &Vocabulary,
        tokens: &[String],
    ) -> Result<Var<T>> {
        let ids: Vec<usize> = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
        params.get(GLOVE_PARAM)?.gather_cols(&ids)
    }

    fn feature_embeddings<T: Real>(
        &self,
        params: &BoundParams<T>,
        bank: &EmbeddingBank,
        ex: &PassageExample,
    ) -> Result<Var<T>> {
        let tape = params.get(CASE_PARAM)?.tape().clone();
        let case_ids: Vec<usize> = ex.case.iter().map(|c| c.index()).collect();
        let pos_ids: Vec<usize> = ex.pos.iter().map(|t| bank.pos_tags.index_of(t)).collect();
        let ner_ids: Vec<usize> = ex.ner.iter().map(|t| bank.ner_tags.index_of(t)).collect();
        let case = params.get(CASE_PARAM)?.gather_cols(&case_ids)?;
        let pos = params.get(POS_PARAM)?.gather_cols(&pos_ids)?;
        let ner = params.get(NER_PARAM)?.gather_cols(&ner_ids)?;
        tape.concat(0, &[&case, &pos, &ner])
    }

    fn contextual_blocks<T: Real>(
        &self,
        tape: &Tape<T>,
        bank: &EmbeddingBank,
        ex: &PassageExample,
    ) -> Result<(Option<Var<T>>, Option<Var<T>>)> {
        match bank.contextual.get(&ex.id) {
            None => Ok((None, None)),
            Some(pair) => {
                if pair.passage.cols() != ex.passage_len() || pair.answer.cols() != ex.answer_len()
                {
                    return Err(Error::Validation {
                        example_id: ex.id.clone(),
                        field: "contextual",
                        message: format!(
                            "sidecar widths {}x{} do not match token counts {}x{}",
                            pair.passage.cols(),
                            pair.answer.cols(),
                            ex.passage_len(),
                            ex.answer_len()
                        ),
                    });
                }
                let bp = tape.constant(pair.passage.map(|v| T::from_f64(f64::from(v))));
                let ba = tape.constant(pair.answer.map(|v| T::from_f64(f64::from(v))));
                Ok((Some(bp), Some(ba)))
            }
        }
    }

    /// Run the full encoder for one example.
    #[allow(clippy::too_many_arguments)]
    pub fn encode<T: Real>(
        &self,
        tape: &Tape<T>,
        params: &BoundParams<T>,
        vocab: &Vocabulary,
        bank: &EmbeddingBank,
        ex: &PassageExample,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<EncodedExample<T>> {
        let gp = self.embed_tokens(params, vocab, &ex.passage_tokens)?;
        let ga = self.embed_tokens(params, vocab, &ex.answer_tokens)?;
        let lp = self.feature_embeddings(params, bank, ex)?;
        let (bp, ba) = self.contextual_blocks(tape, bank, ex)?;
        let inputs = DanInputs { gp, ga, lp, bp, ba };
        let dan = dan_forward(&self.dan, params, &self.dan_cfg, &inputs, training, rng)?;

        let static_graph;
        let mut dynamic_graph = None;
        let node_states = match self.cfg.graph_kind {
            GraphKind::Static => {
                static_graph = build_static_graph(ex);
                biggnn::encode(
                    &dan.x,
                    &GraphRef::Static(&static_graph),
                    self.cfg.hops,
                    self.cfg.direction_order,
                    params,
                    &self.gnn,
                )?
            }
            GraphKind::Dynamic => {
                let scores = dynamic_adjacency(&dan.word_aligned, params.get(DYN_U_PARAM)?)?;
                let graph = sparsify_normalize(&scores, self.cfg.knn_k)?;
                let encoded = biggnn::encode(
                    &dan.x,
                    &GraphRef::Dynamic(&graph),
                    self.cfg.hops,
                    self.cfg.direction_order,
                    params,
                    &self.gnn,
                )?;
                dynamic_graph = Some(graph);
                encoded
            }
        };
        let (graph_embedding, init_cell, init_state) =
            biggnn::graph_readout(&node_states, params, &self.gnn)?;
        Ok(EncodedExample {
            memory: node_states,
            graph_embedding,
            init_cell,
            init_state,
            dan,
            dynamic_graph,
        })
    }

    /// Decode inputs for one encoded example under a batch extension.
    pub fn decode_context<T: Real>(
        &self,
        params: &BoundParams<T>,
        encoded: &EncodedExample<T>,
        vocab: &Vocabulary,
        ext: &ExtendedVocab,
        ex: &PassageExample,
    ) -> Result<(DecodeContext<T>, DecoderState<T>)> {
        let passage_ids = ext.passage_ids(vocab, ex);
        let ctx = DecodeContext::new(
            encoded.memory.clone(),
            params.get(GLOVE_PARAM)?.clone(),
            &passage_ids,
            self.vocab_size,
            ext.extension_len(),
        );
        let state = DecoderState::fresh(
            encoded.init_state.clone(),
            encoded.init_cell.clone(),
            ex.passage_len(),
        );
        Ok((ctx, state))
    }

    /// Teacher-forced cross-entropy plus coverage loss for one example:
    /// Σ_t (−log P(y*_t) + λ·covloss_t), with scheduled forcing feeding
    /// the model argmax instead of gold with probability 1−p.
    #[allow(clippy::too_many_arguments)]
    pub fn stage1_loss<T: Real>(
        &self,
        params: &BoundParams<T>,
        ctx: &DecodeContext<T>,
        init: DecoderState<T>,
        vocab: &Vocabulary,
        ext: &ExtendedVocab,
        ex: &PassageExample,
        lambda: f64,
        tf_prob: f64,
        rng: &mut SeededRng,
    ) -> Result<(Var<T>, Stage1Stats)> {
        let question = ex
            .question_tokens
            .as_ref()
            .ok_or_else(|| Error::Validation {
                example_id: ex.id.clone(),
                field: "question_tokens",
                message: "training requires gold questions".into(),
            })?;
        let mut targets: Vec<usize> = question
            .iter()
            .map(|t| ext.resolve_target(vocab, t))
            .collect();
        targets.push(EOS);

        let tape = ctx.memory.tape().clone();
        let floor = tape.scalar(T::from_f64(-PROB_FLOOR));
        let mut loss = tape.zeros(1, 1);
        let mut state = init;
        let mut previous = SOS;
        let mut floored = 0usize;
        for &target in &targets {
            let step = decode_step(&self.dec, params, ctx, &state, previous)?;
            let p = step.distribution.gather_rows(&[target])?;
            if p.item().to_f64() < PROB_FLOOR {
                floored += 1;
            }
            // max(p, floor) = −min(−p, −floor): keeps the loss finite on
            // targets the copy path cannot reach.
            let clamped = p.scale(-T::one())?.min(&floor)?.scale(-T::one())?;
            let nll = clamped.log()?.scale(-T::one())?;
            loss = loss
                .add(&nll)?
                .add(&step.coverage_loss.scale(T::from_f64(lambda))?)?;
            state = step.state;
            previous = if tf_prob >= 1.0 || rng.uniform() < tf_prob {
                target
            } else {
                let dist = step.distribution.value();
                let mut best = 0;
                for (i, v) in dist.data().iter().enumerate() {
                    if *v > dist.data()[best] {
                        best = i;
                    }
                }
                best
            };
        }
        let stats = Stage1Stats {
            steps: targets.len(),
            floored_targets: floored,
            loss_value: loss.item().to_f64(),
        };
        Ok((loss, stats))
    }

    /// Greedy or beam generation for one example, in evaluation mode.
    pub fn generate(
        &self,
        store: &ParameterStore<f32>,
        vocab: &Vocabulary,
        bank: &EmbeddingBank,
        ex: &PassageExample,
        beam_width: usize,
        max_len: usize,
    ) -> Result<Vec<String>> {
        let tape = Tape::<f32>::new();
        let params = store.bind(&tape);
        let mut rng = SeededRng::new(0);
        let encoded = self.encode(&tape, &params, vocab, bank, ex, false, &mut rng)?;
        let ext = crate::corpus::extend_vocab(&[ex], vocab);
        let (ctx, state) = self.decode_context(&params, &encoded, vocab, &ext, ex)?;
        let ids = if beam_width <= 1 {
            let sampled = sample_sequence(
                &self.dec,
                &params,
                &ctx,
                state,
                SampleMode::Greedy,
                max_len,
                &mut rng,
            )?;
            sampled.words().to_vec()
        } else {
            beam_search(&self.dec, &params, &ctx, state, beam_width, max_len)?
        };
        Ok(ids
            .into_iter()
            .map(|id| ext.surface(vocab, id).to_string())
            .collect())
    }

    /// Sampled sequence plus its on-tape score for the RL objective.
    pub fn sample<T: Real>(
        &self,
        params: &BoundParams<T>,
        ctx: &DecodeContext<T>,
        init: DecoderState<T>,
        mode: SampleMode,
        max_len: usize,
        rng: &mut SeededRng,
    ) -> Result<SampledSequence<T>> {
        sample_sequence(&self.dec, params, ctx, init, mode, max_len, rng)
    }

    /// Surface forms of extended-vocabulary ids, specials dropped.
    pub fn surfaces(&self, ids: &[usize], vocab: &Vocabulary, ext: &ExtendedVocab) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != EOS && id != SOS && id != UNK && id != crate::corpus::PAD)
            .map(|&id| ext.surface(vocab, id).to_string())
            .collect()
    }
}

/// Token → fixed-vector lookup for semantic rewards (UNK vector for
/// out-of-vocabulary tokens).
pub fn embedding_fn<'a>(
    store: &'a ParameterStore<f32>,
    vocab: &'a Vocabulary,
) -> Result<impl Fn(&str) -> Vec<f64> + 'a> {
    let table = &store.get(GLOVE_PARAM)?.array;
    Ok(move |token: &str| {
        let id = vocab.id_or_unk(token);
        (0..table.rows())
            .map(|r| f64::from(table.at(r, id)))
            .collect()
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::corpus::{build_vocab, random_embeddings, TagIndex};

    pub fn tiny_examples() -> Vec<PassageExample> {
        let jsonl = [
            r#"{"id":"e1","passage_tokens":["dogs","bark",".","cats","sleep","."],"answer_tokens":["cats"],"question_tokens":["who","sleep","?"],"pos":["NOUN","VERB","PUNCT","NOUN","VERB","PUNCT"],"ner":["O","O","O","O","O","O"],"dep_head":[1,-1,1,4,-1,4],"sent_bounds":[[0,3],[3,6]]}"#,
            r#"{"id":"e2","passage_tokens":["sun","shines",".","rain","falls","."],"answer_tokens":["rain"],"question_tokens":["what","falls","?"],"pos":["NOUN","VERB","PUNCT","NOUN","VERB","PUNCT"],"ner":["O","O","O","O","O","O"],"dep_head":[1,-1,1,4,-1,4],"sent_bounds":[[0,3],[3,6]]}"#,
        ];
        jsonl
            .iter()
            .map(|j| crate::corpus::example_from_json(j).unwrap())
            .collect()
    }

    pub fn tiny_setup(
        graph_kind: GraphKind,
        dan_enabled: bool,
    ) -> (
        QgModel,
        ParameterStore<f32>,
        Vocabulary,
        EmbeddingBank,
        Vec<PassageExample>,
    ) {
        let examples = tiny_examples();
        let vocab = build_vocab(&examples, 60).unwrap();
        let bank = EmbeddingBank::new(
            6,
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
        );
        let cfg = ModelConfig {
            embed_dim: 6,
            hidden_dim: 8,
            hops: 2,
            knn_k: 3,
            graph_kind,
            direction_order: DirectionOrder::InOut,
            dan_enabled,
            dropout_embed: 0.0,
            dropout_rnn: 0.0,
        };
        let model = QgModel::new(cfg, vocab.len(), &bank).unwrap();
        let glove = random_embeddings(&vocab, 6, &SeededRng::new(99));
        let store = model.init_params(glove, 7).unwrap();
        (model, store, vocab, bank, examples)
    }
}
