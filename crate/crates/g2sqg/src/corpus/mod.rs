//! Dataset, vocabulary and embedding ingestion.
//!
//! Datasets are UTF-8 JSONL, one example per line, with fields `id`,
//! `passage_tokens`, `answer_tokens`, `question_tokens` (optional at
//! inference), `pos`, `ner`, `dep_head`, `dep_label` (optional, unused)
//! and `sent_bounds`. Everything loaded here is immutable afterward.

mod conllu;
mod embed;
mod vocab;

pub use conllu::import_conllu;
pub use embed::{
    load_contextual, load_glove, load_tag_indices, random_embeddings, save_tag_indices,
    ContextualPair, EmbeddingBank, TagIndex, CASE_DIM, NER_DIM, POS_DIM,
};
pub use vocab::{build_vocab, extend_vocab, ExtendedVocab, Vocabulary, EOS, PAD, SOS, UNK};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;

/// Surface-form casing classes backing the 3-dim case embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseClass {
    AllLower,
    Capitalized,
    Other,
}

impl CaseClass {
    pub fn index(self) -> usize {
        match self {
            CaseClass::AllLower => 0,
            CaseClass::Capitalized => 1,
            CaseClass::Other => 2,
        }
    }

    pub fn of(token: &str) -> CaseClass {
        let mut chars = token.chars();
        let Some(first) = chars.next() else {
            return CaseClass::Other;
        };
        let rest_has_upper = chars.any(char::is_uppercase);
        if first.is_uppercase() && !rest_has_upper {
            CaseClass::Capitalized
        } else if !first.is_uppercase() && !rest_has_upper {
            CaseClass::AllLower
        } else {
            CaseClass::Other
        }
    }
}

/// One tokenized passage/answer(/question) with per-token linguistic
/// annotations and sentence boundaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassageExample {
    pub id: String,
    pub passage_tokens: Vec<String>,
    pub answer_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_tokens: Option<Vec<String>>,
    pub pos: Vec<String>,
    pub ner: Vec<String>,
    /// Head index per token, −1 for a sentence root. Heads stay inside
    /// the token's own sentence.
    pub dep_head: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_label: Option<Vec<String>>,
    /// Half-open [start, end) token ranges partitioning the passage.
    pub sent_bounds: Vec<(usize, usize)>,
    #[serde(skip)]
    pub case: Vec<CaseClass>,
}

impl PassageExample {
    pub fn passage_len(&self) -> usize {
        self.passage_tokens.len()
    }

    pub fn answer_len(&self) -> usize {
        self.answer_tokens.len()
    }

    /// Sentence index containing token `t`.
    pub fn sentence_of(&self, t: usize) -> Option<usize> {
        self.sent_bounds.iter().position(|&(s, e)| t >= s && t < e)
    }

    /// Check all structural invariants; fill derived case features.
    pub fn validate(mut self) -> Result<Self> {
        let n = self.passage_tokens.len();
        let fail = |field: &'static str, message: String| Error::Validation {
            example_id: self.id.clone(),
            field,
            message,
        };
        if n == 0 {
            return Err(fail("passage_tokens", "passage must be nonempty".into()));
        }
        if self.answer_tokens.is_empty() {
            return Err(fail("answer_tokens", "answer must be nonempty".into()));
        }
        if let Some(q) = &self.question_tokens {
            if q.is_empty() {
                return Err(fail("question_tokens", "question present but empty".into()));
            }
        }
        for (field, len) in [
            ("pos", self.pos.len()),
            ("ner", self.ner.len()),
            ("dep_head", self.dep_head.len()),
        ] {
            if len != n {
                return Err(fail(field, format!("length {len} != passage length {n}")));
            }
        }
        if let Some(labels) = &self.dep_label {
            if labels.len() != n {
                return Err(fail(
                    "dep_label",
                    format!("length {} != passage length {n}", labels.len()),
                ));
            }
        }
        if self.sent_bounds.is_empty() {
            return Err(fail("sent_bounds", "at least one sentence required".into()));
        }
        let mut cursor = 0;
        for &(s, e) in &self.sent_bounds {
            if s != cursor || e <= s {
                return Err(fail(
                    "sent_bounds",
                    format!("ranges must partition [0, {n}) in order; got ({s}, {e})"),
                ));
            }
            cursor = e;
        }
        if cursor != n {
            return Err(fail(
                "sent_bounds",
                format!("ranges cover [0, {cursor}) but passage has {n} tokens"),
            ));
        }
        for (t, &h) in self.dep_head.iter().enumerate() {
            if h == -1 {
                continue;
            }
            let (s, e) = self.sent_bounds[self.sentence_of(t).expect("bounds partition")];
            if h < 0 || (h as usize) < s || (h as usize) >= e {
                return Err(fail(
                    "dep_head",
                    format!("head {h} of token {t} lies outside its sentence [{s}, {e})"),
                ));
            }
        }
        self.case = self
            .passage_tokens
            .iter()
            .map(|t| CaseClass::of(t))
            .collect();
        Ok(self)
    }
}

/// Load and validate a JSONL dataset. Deterministic: the same file loads
/// to structurally identical examples every time.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<PassageExample>> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: PassageExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(raw.validate()?);
    }
    Ok(out)
}

pub fn example_from_json(json: &str) -> Result<PassageExample> {
    let raw: PassageExample = serde_json::from_str(json).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    raw.validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) const ONE_LINE: &str = r#"{"id":"ex1","passage_tokens":["Paris","is","big"],"answer_tokens":["Paris"],"question_tokens":["what","is","big","?"],"pos":["PROPN","VERB","ADJ"],"ner":["B-LOC","O","O"],"dep_head":[1,-1,1],"sent_bounds":[[0,3]]}"#;

    #[test]
    fn one_line_fixture_loads() {
        let ex = example_from_json(ONE_LINE).unwrap();
        assert_eq!(ex.passage_len(), 3);
        assert_eq!(ex.answer_len(), 1);
        assert_eq!(ex.case[0], CaseClass::Capitalized);
        assert_eq!(ex.case[1], CaseClass::AllLower);
    }

    #[test]
    fn case_classes() {
        assert_eq!(CaseClass::of("Paris"), CaseClass::Capitalized);
        assert_eq!(CaseClass::of("the"), CaseClass::AllLower);
        assert_eq!(CaseClass::of("USA"), CaseClass::Other);
        assert_eq!(CaseClass::of("McDonald"), CaseClass::Other);
        assert_eq!(CaseClass::of("123"), CaseClass::AllLower);
    }

    #[test]
    fn dep_head_outside_sentence_is_rejected() {
        let json = r#"{"id":"bad","passage_tokens":["a","b","c","d"],"answer_tokens":["a"],"pos":["X","X","X","X"],"ner":["O","O","O","O"],"dep_head":[1,-1,3,1],"sent_bounds":[[0,2],[2,4]]}"#;
        match example_from_json(json) {
            Err(Error::Validation {
                field, example_id, ..
            }) => {
                assert_eq!(field, "dep_head");
                assert_eq!(example_id, "bad");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn sentence_bounds_must_partition() {
        let json = r#"{"id":"gap","passage_tokens":["a","b","c"],"answer_tokens":["a"],"pos":["X","X","X"],"ner":["O","O","O"],"dep_head":[-1,-1,-1],"sent_bounds":[[0,1],[2,3]]}"#;
        assert!(matches!(
            example_from_json(json),
            Err(Error::Validation {
                field: "sent_bounds",
                ..
            })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let tmp = tempfile_path("malformed");
        let mut f = std::fs::File::create(&tmp).unwrap();
        writeln!(f, "{ONE_LINE}").unwrap();
        writeln!(f, "{{not json").unwrap();
        drop(f);
        match load_dataset(&tmp) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_file(&tmp).ok();
    }

    #[test]
    fn loading_twice_is_identical() {
        let tmp = tempfile_path("twice");
        std::fs::write(&tmp, format!("{ONE_LINE}\n")).unwrap();
        let a = load_dataset(&tmp).unwrap();
        let b = load_dataset(&tmp).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        std::fs::remove_file(&tmp).ok();
    }

    pub(crate) fn tempfile_path(tag: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!(
            "g2sqg-corpus-test-{tag}-{}.jsonl",
            std::process::id()
        ));
        p
    }
}
