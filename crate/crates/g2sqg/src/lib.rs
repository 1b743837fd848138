//! Graph-to-sequence question generation.
//!
//! Given a tokenized passage and an answer span, the model encodes the
//! passage as a graph (syntactic or learned), aligns answer information
//! into the node embeddings, and decodes a question with a copy/coverage
//! attention decoder. Training runs in two stages: cross-entropy
//! pretraining, then fine-tuning on a mixed objective that adds a
//! self-critical sequence-training term rewarded by BLEU-4 plus a word
//! mover's distance semantic score.
//!
//! The crate is organized around a small reverse-mode differentiation
//! engine ([`gradcore`]); every model component builds on the same tape
//! primitives, so the whole training loss can be checked against finite
//! differences (see [`gradcore::grad_check`]).

pub mod biggnn;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dan;
pub mod decoder;
pub mod error;
pub mod gradcore;
pub mod model;
pub mod rewards;
pub mod rng;
pub mod textgraph;
pub mod trainer;

pub use error::{Error, Result};
