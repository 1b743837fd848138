use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::gradcore::RealArray;
use crate::rng::SeededRng;
use crate::trainer::read_container;
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

pub const CASE_DIM: usize = 3;
pub const POS_DIM: usize = 12;
pub const NER_DIM: usize = 8;

/// Tag-string → column index, with index 0 reserved for unseen tags.
#[derive(Debug, Clone)]
pub struct TagIndex {
    tags: Vec<String>,
}

impl TagIndex {
    /// Build from every tag occurring in `streams`, sorted for
    /// determinism.
    pub fn from_tags<'a>(streams: impl Iterator<Item = &'a str>) -> Self {
        let mut set: Vec<&str> = streams.collect();
        set.sort_unstable();
        set.dedup();
        let mut tags = vec!["<unk-tag>".to_string()];
        tags.extend(set.into_iter().map(str::to_string));
        TagIndex { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> usize {
        self.tags.iter().position(|t| t == tag).unwrap_or(0)
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Rebuild from a previously saved tag list (fallback slot included).
    pub fn from_saved(tags: Vec<String>) -> Self {
        TagIndex { tags }
    }
}

/// Fixed contextual matrices for one example (columns = tokens).
#[derive(Debug, Clone)]
pub struct ContextualPair {
    pub passage: RealArray<f32>,
    pub answer: RealArray<f32>,
}

/// Embedding metadata and per-example fixed inputs. The actual tables
/// (GloVe, case/POS/NER) live in the parameter store under
/// `embed/glove`, `embed/case`, `embed/pos`, `embed/ner`, stored as
/// dim × table-size so a column gather yields token embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    pub embed_dim: usize,
    pub pos_tags: TagIndex,
    pub ner_tags: TagIndex,
    pub contextual: BTreeMap<String, ContextualPair>,
    pub ctx_passage_dim: usize,
    pub ctx_answer_dim: usize,
}

impl EmbeddingBank {
    pub fn new(embed_dim: usize, pos_tags: TagIndex, ner_tags: TagIndex) -> Self {
        EmbeddingBank {
            embed_dim,
            pos_tags,
            ner_tags,
            contextual: BTreeMap::new(),
            ctx_passage_dim: 0,
            ctx_answer_dim: 0,
        }
    }

    pub fn has_contextual(&self) -> bool {
        !self.contextual.is_empty()
    }

    /// Attach contextual sidecar matrices; dims must agree across
    /// examples.
    pub fn set_contextual(&mut self, pairs: BTreeMap<String, ContextualPair>) -> Result<()> {
        let mut p_dim = 0;
        let mut a_dim = 0;
        for (id, pair) in &pairs {
            let (pr, ar) = (pair.passage.rows(), pair.answer.rows());
            if p_dim == 0 {
                p_dim = pr;
                a_dim = ar;
            } else if pr != p_dim || ar != a_dim {
                return Err(Error::Format(format!(
                    "contextual dims for `{id}` ({pr}/{ar}) disagree with earlier examples ({p_dim}/{a_dim})"
                )));
            }
        }
        self.ctx_passage_dim = p_dim;
        self.ctx_answer_dim = a_dim;
        self.contextual = pairs;
        Ok(())
    }
}

/// Read a GloVe-format text file (token followed by `dim` decimals per
/// line). In-vocabulary tokens found in the file keep the file vector
/// bit-for-bit; vocabulary tokens absent from the file get a seeded
/// uniform(−0.1, 0.1) vector. Either way the table is fixed. Returns the
/// dim × |V| table.
pub fn load_glove(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    rng: &SeededRng,
) -> Result<RealArray<f32>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut dim = 0usize;
    let mut found: BTreeMap<usize, Vec<f32>> = BTreeMap::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().ok_or(Error::Parse {
            line: line_no + 1,
            message: "empty embedding line".into(),
        })?;
        let values: Vec<f32> = parts
            .map(|p| {
                p.parse::<f32>().map_err(|e| Error::Parse {
                    line: line_no + 1,
                    message: format!("bad float `{p}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if dim == 0 {
            if values.is_empty() {
                return Err(Error::Format(format!(
                    "line {} has no embedding values",
                    line_no + 1
                )));
            }
            dim = values.len();
        } else if values.len() != dim {
            return Err(Error::Format(format!(
                "line {} has {} values but earlier lines have {dim}",
                line_no + 1,
                values.len()
            )));
        }
        if let Some(id) = vocab.id_of(token) {
            found.entry(id).or_insert(values);
        }
    }
    if dim == 0 {
        return Err(Error::Format("embedding file has no data lines".into()));
    }
    Ok(assemble_table(vocab, dim, found, rng))
}

/// Seeded uniform(−0.1, 0.1) table for every token; used when no
/// pretrained file is configured (synthetic corpora).
pub fn random_embeddings(vocab: &Vocabulary, dim: usize, rng: &SeededRng) -> RealArray<f32> {
    assemble_table(vocab, dim, BTreeMap::new(), rng)
}

fn assemble_table(
    vocab: &Vocabulary,
    dim: usize,
    found: BTreeMap<usize, Vec<f32>>,
    rng: &SeededRng,
) -> RealArray<f32> {
    let mut table = RealArray::zeros(dim, vocab.len());
    // One independent stream per token id: the vector for a token does
    // not depend on which other tokens were in the file.
    for id in 0..vocab.len() {
        match found.get(&id) {
            Some(v) => {
                for (r, &x) in v.iter().enumerate() {
                    table.set(r, id, x);
                }
            }
            None => {
                let mut stream = rng.fork(&format!("glove-oov/{id}"));
                for r in 0..dim {
                    table.set(r, id, stream.uniform_in(-0.1, 0.1) as f32);
                }
            }
        }
    }
    table
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TagsFile {
    pos: Vec<String>,
    ner: Vec<String>,
}

/// Persist the POS/NER tag tables next to a trained model (JSON).
pub fn save_tag_indices(bank: &EmbeddingBank, path: impl AsRef<Path>) -> Result<()> {
    let file = TagsFile {
        pos: bank.pos_tags.tags().to_vec(),
        ner: bank.ner_tags.tags().to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_tag_indices(path: impl AsRef<Path>) -> Result<(TagIndex, TagIndex)> {
    let file: TagsFile = serde_json::from_str(&std::fs::read_to_string(path.as_ref())?)?;
    Ok((
        TagIndex::from_saved(file.pos),
        TagIndex::from_saved(file.ner),
    ))
}

/// Load contextual sidecar matrices from a tensor container with keys
/// `ctx/<example-id>/passage` and `ctx/<example-id>/answer`.
pub fn load_contextual(path: impl AsRef<Path>) -> Result<BTreeMap<String, ContextualPair>> {
    let tensors = read_container(path)?;
    let mut passages: BTreeMap<String, RealArray<f32>> = BTreeMap::new();
    let mut answers: BTreeMap<String, RealArray<f32>> = BTreeMap::new();
    for (key, tensor) in tensors {
        let Some(rest) = key.strip_prefix("ctx/") else {
            return Err(Error::Format(format!("unexpected sidecar key `{key}`")));
        };
        if let Some(id) = rest.strip_suffix("/passage") {
            passages.insert(id.to_string(), tensor);
        } else if let Some(id) = rest.strip_suffix("/answer") {
            answers.insert(id.to_string(), tensor);
        } else {
            return Err(Error::Format(format!("unexpected sidecar key `{key}`")));
        }
    }
    let mut out = BTreeMap::new();
    for (id, passage) in passages {
        let answer = answers.remove(&id).ok_or_else(|| {
            Error::Format(format!("sidecar for `{id}` has a passage but no answer"))
        })?;
        out.insert(id, ContextualPair { passage, answer });
    }
    if let Some(id) = answers.keys().next() {
        return Err(Error::Format(format!(
            "sidecar for `{id}` has an answer but no passage"
        )));
    }
    Ok(out)
}
