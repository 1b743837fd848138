use super::PassageExample;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Token table with dense ids; specials occupy ids 0–3 and tokens follow
/// in descending training-set frequency (ties by first occurrence).
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id_of(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, id = line index.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for t in &self.tokens {
            writeln!(f, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            tokens.push(line?);
        }
        for (i, expected) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expected) {
                return Err(Error::Format(format!(
                    "vocabulary file must start with specials {SPECIALS:?}"
                )));
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Count frequencies over passages, answers and questions; keep the
/// `max_size − 4` most frequent tokens after the specials.
pub fn build_vocab(dataset: &[PassageExample], max_size: usize) -> Result<Vocabulary> {
    if dataset.is_empty() {
        return Err(Error::Config("build_vocab: dataset is empty".into()));
    }
    if max_size < 5 {
        return Err(Error::Config(format!(
            "vocab max_size must be at least 5, got {max_size}"
        )));
    }
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut order = 0usize;
    for ex in dataset {
        let streams = [
            Some(&ex.passage_tokens),
            Some(&ex.answer_tokens),
            ex.question_tokens.as_ref(),
        ];
        for stream in streams.into_iter().flatten() {
            for token in stream {
                if SPECIALS.contains(&token.as_str()) {
                    continue;
                }
                let entry = counts.entry(token.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, (usize, usize))> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(max_size - 4)
            .map(|(t, _)| t.to_string()),
    );
    Ok(Vocabulary::from_tokens(tokens))
}

/// Base vocabulary plus the out-of-vocabulary source tokens of one batch,
/// appended with temporary ids starting at |V|. Dropped after the batch.
#[derive(Debug, Clone)]
pub struct ExtendedVocab {
    base_len: usize,
    extension: Vec<String>,
    ext_index: HashMap<String, usize>,
}

impl ExtendedVocab {
    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn extension_len(&self) -> usize {
        self.extension.len()
    }

    pub fn total_len(&self) -> usize {
        self.base_len + self.extension.len()
    }

    pub fn ext_tokens(&self) -> &[String] {
        &self.extension
    }

    /// Extended id of an out-of-vocabulary source token, if present.
    pub fn ext_id_of(&self, token: &str) -> Option<usize> {
        self.ext_index.get(token).map(|i| self.base_len + i)
    }

    /// Resolve a source (passage/answer) token: base id when in-vocab,
    /// extension id otherwise. Source tokens are always resolvable.
    pub fn resolve_source(&self, vocab: &Vocabulary, token: &str) -> usize {
        vocab
            .id_of(token)
            .or_else(|| self.ext_id_of(token))
            .unwrap_or(UNK)
    }

    /// Resolve a target (question) token: base id, else extension id,
    /// else UNK.
    pub fn resolve_target(&self, vocab: &Vocabulary, token: &str) -> usize {
        vocab
            .id_of(token)
            .or_else(|| self.ext_id_of(token))
            .unwrap_or(UNK)
    }

    /// Surface form of any extended-vocabulary id.
    pub fn surface<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id < self.base_len {
            vocab.token(id)
        } else {
            &self.extension[id - self.base_len]
        }
    }

    /// Per-position extended ids for a passage, the map used to aggregate
    /// copy probabilities.
    pub fn passage_ids(&self, vocab: &Vocabulary, ex: &PassageExample) -> Vec<usize> {
        ex.passage_tokens
            .iter()
            .map(|t| self.resolve_source(vocab, t))
            .collect()
    }
}

/// Collect out-of-vocabulary passage and answer tokens of a batch in
/// first-occurrence order.
pub fn extend_vocab(batch: &[&PassageExample], vocab: &Vocabulary) -> ExtendedVocab {
    let mut extension = Vec::new();
    let mut ext_index = HashMap::new();
    for ex in batch {
        for token in ex.passage_tokens.iter().chain(&ex.answer_tokens) {
            if vocab.id_of(token).is_none() && !ext_index.contains_key(token) {
                ext_index.insert(token.clone(), extension.len());
                extension.push(token.clone());
            }
        }
    }
    ExtendedVocab {
        base_len: vocab.len(),
        extension,
        ext_index,
    }
}
