//! C ABI for the question-generation library.
//!
//! Conventions:
//! - Objects cross the boundary as opaque handles (`G2sqgModel`) that
//!   must be released with their `_free` function.
//! - Every fallible call returns a [`G2sqgStatus`]; on failure the
//!   thread-local message from [`g2sqg_last_error_message`] describes it.
//! - Strings returned through `char **` are NUL-terminated, owned by the
//!   caller, and released with [`g2sqg_string_free`].
//! - Structured inputs and outputs (examples, token lists) travel as
//!   JSON, matching the dataset and prediction formats of the CLI.
//!
//! The header `include/g2sqg.h` is regenerated on every build.

use g2sqg::config::RunConfig;
use g2sqg::corpus::{
    example_from_json, load_contextual, load_tag_indices, EmbeddingBank, Vocabulary,
};
use g2sqg::model::{embedding_fn, QgModel};
use g2sqg::rewards::{evaluate_corpus, total_reward};
use g2sqg::trainer::load_checkpoint;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_uint};
use std::path::Path;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum G2sqgStatus {
    G2sqgOk = 0,
    G2sqgNullArgument = 1,
    G2sqgInvalidUtf8 = 2,
    G2sqgIoError = 3,
    G2sqgParseError = 4,
    G2sqgConfigError = 5,
    G2sqgRuntimeError = 6,
}

/// Per-sequence reward breakdown (mirrors the library's reward report).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct G2sqgReward {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub wmd: f64,
    pub f_sem: f64,
    pub total: f64,
}

/// Corpus-level metrics.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct G2sqgMetrics {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub n: u64,
}

/// Opaque handle to a loaded model plus its vocabulary and embeddings.
pub struct G2sqgModel {
    model: QgModel,
    store: g2sqg::gradcore::ParameterStore<f32>,
    vocab: Vocabulary,
    bank: EmbeddingBank,
    default_beam_width: usize,
    default_max_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &g2sqg::Error) -> G2sqgStatus {
    use g2sqg::Error as E;
    match err {
        E::Io(_) => G2sqgStatus::G2sqgIoError,
        E::Parse { .. } | E::Json(_) | E::Format(_) => G2sqgStatus::G2sqgParseError,
        E::Config(_) | E::Usage(_) | E::UnknownParameter(_) => G2sqgStatus::G2sqgConfigError,
        _ => G2sqgStatus::G2sqgRuntimeError,
    }
}

fn fail(err: &g2sqg::Error) -> G2sqgStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, G2sqgStatus> {
    if ptr.is_null() {
        set_error("argument is NULL");
        return Err(G2sqgStatus::G2sqgNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        G2sqgStatus::G2sqgInvalidUtf8
    })
}

fn string_out(value: String, out: *mut *mut c_char) -> G2sqgStatus {
    match CString::new(value.replace('\0', "?")) {
        Ok(cstring) => {
            unsafe { *out = cstring.into_raw() };
            G2sqgStatus::G2sqgOk
        }
        Err(_) => {
            set_error("output contained an interior NUL");
            G2sqgStatus::G2sqgRuntimeError
        }
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn g2sqg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message describing the most recent failure on this thread; valid
/// until the next failing call. Do not free.
#[no_mangle]
pub extern "C" fn g2sqg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Release a string returned through a `char **` out-parameter.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn load_model_impl(
    checkpoint: &str,
    vocab_path: &str,
    tags_path: &str,
    config_path: Option<&str>,
    contextual_path: Option<&str>,
) -> g2sqg::Result<G2sqgModel> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config_path {
        cfg.apply_file(path)?;
    }
    cfg.validate()?;
    let vocab = Vocabulary::load(vocab_path)?;
    let (pos_tags, ner_tags) = load_tag_indices(Path::new(tags_path))?;
    let mut bank = EmbeddingBank::new(cfg.model_embed_dim, pos_tags, ner_tags);
    if let Some(path) = contextual_path {
        bank.set_contextual(load_contextual(path)?)?;
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let model = QgModel::new(cfg.model_config(), vocab.len(), &bank)?;
    Ok(G2sqgModel {
        model,
        store: ckpt.params,
        vocab,
        bank,
        default_beam_width: cfg.decode_beam_width,
        default_max_len: cfg.decode_max_len,
    })
}

/// Load a model from a checkpoint plus its vocabulary and tag files.
/// `config_path` and `contextual_path` may be NULL; the config defaults
/// then apply (the checkpoint must have been trained with them).
///
/// # Safety
/// All path arguments must be NULL or valid NUL-terminated strings;
/// `out_model` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_model_load(
    checkpoint_path: *const c_char,
    vocab_path: *const c_char,
    tags_path: *const c_char,
    config_path: *const c_char,
    contextual_path: *const c_char,
    out_model: *mut *mut G2sqgModel,
) -> G2sqgStatus {
    if out_model.is_null() {
        set_error("out_model is NULL");
        return G2sqgStatus::G2sqgNullArgument;
    }
    let (checkpoint, vocab, tags) = match (
        utf8_arg(checkpoint_path),
        utf8_arg(vocab_path),
        utf8_arg(tags_path),
    ) {
        (Ok(c), Ok(v), Ok(t)) => (c, v, t),
        (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
    };
    let config = if config_path.is_null() {
        None
    } else {
        match utf8_arg(config_path) {
            Ok(c) => Some(c),
            Err(s) => return s,
        }
    };
    let contextual = if contextual_path.is_null() {
        None
    } else {
        match utf8_arg(contextual_path) {
            Ok(c) => Some(c),
            Err(s) => return s,
        }
    };
    match load_model_impl(checkpoint, vocab, tags, config, contextual) {
        Ok(model) => {
            *out_model = Box::into_raw(Box::new(model));
            G2sqgStatus::G2sqgOk
        }
        Err(e) => fail(&e),
    }
}

/// Release a model handle.
///
/// # Safety
/// `model` must be NULL or a pointer from [`g2sqg_model_load`], not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_model_free(model: *mut G2sqgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generate a question for one example. `example_json` uses the dataset
/// line format; the result is written as
/// `{"id": ..., "question_tokens": [...]}`. A `beam_width` or `max_len`
/// of 0 selects the loaded configuration's default.
///
/// # Safety
/// `model` must be a live handle; `example_json` a valid NUL-terminated
/// string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_model_generate_json(
    model: *const G2sqgModel,
    example_json: *const c_char,
    beam_width: c_uint,
    max_len: c_uint,
    out_json: *mut *mut c_char,
) -> G2sqgStatus {
    if model.is_null() || out_json.is_null() {
        set_error("model or out_json is NULL");
        return G2sqgStatus::G2sqgNullArgument;
    }
    let json = match utf8_arg(example_json) {
        Ok(j) => j,
        Err(s) => return s,
    };
    let handle = &*model;
    let example = match example_from_json(json) {
        Ok(ex) => ex,
        Err(e) => return fail(&e),
    };
    let width = if beam_width == 0 {
        handle.default_beam_width
    } else {
        beam_width as usize
    };
    let limit = if max_len == 0 {
        handle.default_max_len
    } else {
        max_len as usize
    };
    match handle.model.generate(
        &handle.store,
        &handle.vocab,
        &handle.bank,
        &example,
        width,
        limit,
    ) {
        Ok(tokens) => string_out(
            serde_json::json!({"id": example.id, "question_tokens": tokens}).to_string(),
            out_json,
        ),
        Err(e) => fail(&e),
    }
}

fn tokens_from_json(json: &str) -> g2sqg::Result<Vec<String>> {
    serde_json::from_str(json).map_err(g2sqg::Error::from)
}

/// Reward of a candidate token sequence against a reference, using the
/// model's fixed word vectors for the semantic term. Token sequences are
/// JSON string arrays.
///
/// # Safety
/// `model` must be a live handle; the JSON arguments valid NUL-terminated
/// strings; `out_reward` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_model_reward(
    model: *const G2sqgModel,
    candidate_json: *const c_char,
    reference_json: *const c_char,
    alpha: f64,
    out_reward: *mut G2sqgReward,
) -> G2sqgStatus {
    if model.is_null() || out_reward.is_null() {
        set_error("model or out_reward is NULL");
        return G2sqgStatus::G2sqgNullArgument;
    }
    let (candidate, reference) = match (utf8_arg(candidate_json), utf8_arg(reference_json)) {
        (Ok(c), Ok(r)) => (c, r),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    let handle = &*model;
    let run = || -> g2sqg::Result<G2sqgReward> {
        let candidate = tokens_from_json(candidate)?;
        let reference = tokens_from_json(reference)?;
        let embed = embedding_fn(&handle.store, &handle.vocab)?;
        let report = total_reward(&candidate, &reference, embed, alpha)?;
        Ok(G2sqgReward {
            bleu4: report.bleu4,
            rouge_l: report.rouge_l,
            wmd: report.wmd,
            f_sem: report.f_sem,
            total: report.total,
        })
    };
    match run() {
        Ok(reward) => {
            *out_reward = reward;
            G2sqgStatus::G2sqgOk
        }
        Err(e) => fail(&e),
    }
}

/// Corpus BLEU-4 and mean ROUGE-L over aligned candidate/reference
/// pairs, passed as a JSON array of `[candidate, reference]` token-array
/// pairs. Needs no model handle.
///
/// # Safety
/// `pairs_json` must be a valid NUL-terminated string; `out_metrics` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn g2sqg_evaluate_pairs(
    pairs_json: *const c_char,
    out_metrics: *mut G2sqgMetrics,
) -> G2sqgStatus {
    if out_metrics.is_null() {
        set_error("out_metrics is NULL");
        return G2sqgStatus::G2sqgNullArgument;
    }
    let json = match utf8_arg(pairs_json) {
        Ok(j) => j,
        Err(s) => return s,
    };
    let run = || -> g2sqg::Result<G2sqgMetrics> {
        let pairs: Vec<(Vec<String>, Vec<String>)> = serde_json::from_str(json)?;
        let report = evaluate_corpus(&pairs)?;
        Ok(G2sqgMetrics {
            bleu4: report.bleu4,
            rouge_l: report.rouge_l,
            n: report.n as u64,
        })
    };
    match run() {
        Ok(metrics) => {
            *out_metrics = metrics;
            G2sqgStatus::G2sqgOk
        }
        Err(e) => fail(&e),
    }
}
