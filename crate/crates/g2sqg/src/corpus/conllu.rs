//! CoNLL-U importer.
//!
//! Converts a CoNLL-U sentence stream plus an alignment file into the
//! JSONL example form. Only the ID, FORM, UPOS and HEAD columns are
//! used; HEAD 0 (sentence root) becomes −1; NER tags default to "O".
//!
//! The alignment file is JSONL, one record per example:
//! `{"id": ..., "sentences": [indices into the stream, in order],
//!   "answer_tokens": [...], "question_tokens": [...] (optional)}`.

use super::PassageExample;
use crate::error::{Error, Result};
use serde::Deserialize;
use std::io::BufRead;
use std::path::Path;

#[derive(Debug, Clone)]
struct ConlluSentence {
    forms: Vec<String>,
    upos: Vec<String>,
    /// 1-based head per token, 0 for root.
    heads: Vec<usize>,
}

#[derive(Deserialize)]
struct AlignmentRecord {
    id: String,
    sentences: Vec<usize>,
    answer_tokens: Vec<String>,
    #[serde(default)]
    question_tokens: Option<Vec<String>>,
}

fn parse_conllu(path: impl AsRef<Path>) -> Result<Vec<ConlluSentence>> {
    let file = std::fs::File::open(path.as_ref())?;
    let mut sentences = Vec::new();
    let mut current = ConlluSentence {
        forms: Vec::new(),
        upos: Vec::new(),
        heads: Vec::new(),
    };
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            if !current.forms.is_empty() {
                sentences.push(std::mem::replace(
                    &mut current,
                    ConlluSentence {
                        forms: Vec::new(),
                        upos: Vec::new(),
                        heads: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() < 8 {
            return Err(Error::Parse {
                line: line_no + 1,
                message: format!("expected ≥8 tab-separated columns, got {}", cols.len()),
            });
        }
        // Skip multiword-token and empty-node lines (IDs like 3-4, 5.1).
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Parse {
            line: line_no + 1,
            message: format!("bad HEAD column `{}`", cols[6]),
        })?;
        current.forms.push(cols[1].to_string());
        current.upos.push(cols[3].to_string());
        current.heads.push(head);
    }
    if !current.forms.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Import examples from a CoNLL-U file and its alignment file.
pub fn import_conllu(
    conllu_path: impl AsRef<Path>,
    alignment_path: impl AsRef<Path>,
) -> Result<Vec<PassageExample>> {
    let sentences = parse_conllu(conllu_path)?;
    let file = std::fs::File::open(alignment_path.as_ref())?;
    let mut out = Vec::new();
    for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AlignmentRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no + 1,
            message: e.to_string(),
        })?;
        let mut passage_tokens = Vec::new();
        let mut pos = Vec::new();
        let mut dep_head = Vec::new();
        let mut sent_bounds = Vec::new();
        for &s in &record.sentences {
            let sentence = sentences.get(s).ok_or_else(|| Error::Validation {
                example_id: record.id.clone(),
                field: "sentences",
                message: format!(
                    "sentence index {s} out of range ({} parsed)",
                    sentences.len()
                ),
            })?;
            let offset = passage_tokens.len();
            sent_bounds.push((offset, offset + sentence.forms.len()));
            passage_tokens.extend(sentence.forms.iter().cloned());
            pos.extend(sentence.upos.iter().cloned());
            for &h in &sentence.heads {
                // HEAD is 1-based within the sentence; 0 marks the root.
                dep_head.push(if h == 0 { -1 } else { (offset + h - 1) as i64 });
            }
        }
        let ner = vec!["O".to_string(); passage_tokens.len()];
        let example = PassageExample {
            id: record.id,
            passage_tokens,
            answer_tokens: record.answer_tokens,
            question_tokens: record.question_tokens,
            pos,
            ner,
            dep_head,
            dep_label: None,
            sent_bounds,
            case: Vec::new(),
        };
        out.push(example.validate()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONLLU: &str = "\
# sent_id = 1
1\tdogs\tdog\tNOUN\t_\t_\t2\tnsubj\t_\t_
2\tbark\tbark\tVERB\t_\t_\t0\troot\t_\t_

# sent_id = 2
1\tcats\tcat\tNOUN\t_\t_\t2\tnsubj\t_\t_
2\tsleep\tsleep\tVERB\t_\t_\t0\troot\t_\t_
";

    fn temp(tag: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("g2sqg-conllu-{tag}-{}.txt", std::process::id()));
        p
    }

    #[test]
    fn two_sentence_import_offsets_heads() {
        let cpath = temp("c");
        let apath = temp("a");
        std::fs::write(&cpath, CONLLU).unwrap();
        std::fs::write(
            &apath,
            r#"{"id":"ex","sentences":[0,1],"answer_tokens":["cats"],"question_tokens":["who","sleep","?"]}"#,
        )
        .unwrap();
        let examples = import_conllu(&cpath, &apath).unwrap();
        assert_eq!(examples.len(), 1);
        let ex = &examples[0];
        assert_eq!(ex.passage_tokens, ["dogs", "bark", "cats", "sleep"]);
        assert_eq!(ex.dep_head, [1, -1, 3, -1]);
        assert_eq!(ex.sent_bounds, [(0, 2), (2, 4)]);
        assert_eq!(ex.pos, ["NOUN", "VERB", "NOUN", "VERB"]);
        assert!(ex.ner.iter().all(|t| t == "O"));
        std::fs::remove_file(&cpath).ok();
        std::fs::remove_file(&apath).ok();
    }

    #[test]
    fn out_of_range_sentence_is_a_validation_error() {
        let cpath = temp("c2");
        let apath = temp("a2");
        std::fs::write(&cpath, CONLLU).unwrap();
        std::fs::write(
            &apath,
            r#"{"id":"ex","sentences":[5],"answer_tokens":["cats"]}"#,
        )
        .unwrap();
        assert!(matches!(
            import_conllu(&cpath, &apath),
            Err(Error::Validation { .. })
        ));
        std::fs::remove_file(&cpath).ok();
        std::fs::remove_file(&apath).ok();
    }
}
