//! Run configuration: a line-oriented `key = value` file with `#`
//! comments, overridable by command-line flags. Unknown keys are
//! rejected; every default is the published working value.

use crate::biggnn::DirectionOrder;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::textgraph::GraphKind;
use crate::trainer::LossConfig;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub graph_kind: GraphKind,
    pub knn_k: usize,
    pub gnn_hops: usize,
    pub gnn_direction_order: DirectionOrder,
    pub model_embed_dim: usize,
    pub model_hidden_dim: usize,
    pub model_use_dan: bool,
    pub vocab_max_size: usize,
    pub dropout_embed: f64,
    pub dropout_rnn: f64,
    pub decode_beam_width: usize,
    pub decode_max_len: usize,
    pub loss_lambda: f64,
    pub loss_gamma: f64,
    pub loss_alpha: f64,
    pub optim_lr_pretrain: f64,
    pub optim_lr_finetune: f64,
    pub optim_clip: f64,
    pub tf_base: f64,
    pub tf_decay: f64,
    pub train_batch_size: usize,
    pub train_max_epochs: usize,
    pub train_plateau_factor: f64,
    pub train_plateau_patience: usize,
    pub train_early_stop: usize,
    pub sweep_min_hops: usize,
    pub sweep_max_hops: usize,
    pub gradcheck_tolerance: f64,
    pub gradcheck_step: f64,
    pub gradcheck_points: usize,
    pub data_train: Option<PathBuf>,
    pub data_dev: Option<PathBuf>,
    pub data_test: Option<PathBuf>,
    pub data_glove: Option<PathBuf>,
    pub data_contextual: Option<PathBuf>,
    pub data_vocab: Option<PathBuf>,
    pub data_tags: Option<PathBuf>,
    pub data_checkpoint: Option<PathBuf>,
    pub data_predictions: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            graph_kind: GraphKind::Static,
            knn_k: 10,
            gnn_hops: 3,
            gnn_direction_order: DirectionOrder::InOut,
            model_embed_dim: 300,
            model_hidden_dim: 300,
            model_use_dan: true,
            vocab_max_size: 70_000,
            dropout_embed: 0.4,
            dropout_rnn: 0.3,
            decode_beam_width: 5,
            decode_max_len: 30,
            loss_lambda: 0.4,
            loss_gamma: 0.99,
            loss_alpha: 0.1,
            optim_lr_pretrain: 0.001,
            optim_lr_finetune: 0.00001,
            optim_clip: 10.0,
            tf_base: 0.75,
            tf_decay: 0.9999,
            train_batch_size: 8,
            train_max_epochs: 100,
            train_plateau_factor: 0.5,
            train_plateau_patience: 3,
            train_early_stop: 10,
            sweep_min_hops: 1,
            sweep_max_hops: 4,
            gradcheck_tolerance: 1e-4,
            gradcheck_step: 1e-5,
            gradcheck_points: 100,
            data_train: None,
            data_dev: None,
            data_test: None,
            data_glove: None,
            data_contextual: None,
            data_vocab: None,
            data_tags: None,
            data_checkpoint: None,
            data_predictions: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "graph.kind" => self.graph_kind = value.parse()?,
            "knn.k" => self.knn_k = parse_num(key, value)?,
            "gnn.hops" => self.gnn_hops = parse_num(key, value)?,
            "gnn.direction_order" => self.gnn_direction_order = value.parse()?,
            "model.embed_dim" => self.model_embed_dim = parse_num(key, value)?,
            "model.hidden_dim" => self.model_hidden_dim = parse_num(key, value)?,
            "model.use_dan" => self.model_use_dan = parse_num(key, value)?,
            "vocab.max_size" => self.vocab_max_size = parse_num(key, value)?,
            "dropout.embed" => self.dropout_embed = parse_num(key, value)?,
            "dropout.rnn" => self.dropout_rnn = parse_num(key, value)?,
            "decode.beam_width" => self.decode_beam_width = parse_num(key, value)?,
            "decode.max_len" => self.decode_max_len = parse_num(key, value)?,
            "loss.lambda" => self.loss_lambda = parse_num(key, value)?,
            "loss.gamma" => self.loss_gamma = parse_num(key, value)?,
            "loss.alpha" => self.loss_alpha = parse_num(key, value)?,
            "optim.lr_pretrain" => self.optim_lr_pretrain = parse_num(key, value)?,
            "optim.lr_finetune" => self.optim_lr_finetune = parse_num(key, value)?,
            "optim.clip" => self.optim_clip = parse_num(key, value)?,
            "tf.base" => self.tf_base = parse_num(key, value)?,
            "tf.decay" => self.tf_decay = parse_num(key, value)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, value)?,
            "train.max_epochs" => self.train_max_epochs = parse_num(key, value)?,
            "train.plateau_factor" => self.train_plateau_factor = parse_num(key, value)?,
            "train.plateau_patience" => self.train_plateau_patience = parse_num(key, value)?,
            "train.early_stop" => self.train_early_stop = parse_num(key, value)?,
            "sweep.min_hops" => self.sweep_min_hops = parse_num(key, value)?,
            "sweep.max_hops" => self.sweep_max_hops = parse_num(key, value)?,
            "gradcheck.tolerance" => self.gradcheck_tolerance = parse_num(key, value)?,
            "gradcheck.step" => self.gradcheck_step = parse_num(key, value)?,
            "gradcheck.points" => self.gradcheck_points = parse_num(key, value)?,
            "data.train" => self.data_train = Some(PathBuf::from(value)),
            "data.dev" => self.data_dev = Some(PathBuf::from(value)),
            "data.test" => self.data_test = Some(PathBuf::from(value)),
            "data.glove" => self.data_glove = Some(PathBuf::from(value)),
            "data.contextual" => self.data_contextual = Some(PathBuf::from(value)),
            "data.vocab" => self.data_vocab = Some(PathBuf::from(value)),
            "data.tags" => self.data_tags = Some(PathBuf::from(value)),
            "data.checkpoint" => self.data_checkpoint = Some(PathBuf::from(value)),
            "data.predictions" => self.data_predictions = Some(PathBuf::from(value)),
            other => {
                return Err(Error::Config(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    /// Merge assignments from a `key = value` file.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = std::fs::read_to_string(path.as_ref())?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no + 1,
                    message: format!("expected `key = value`, got `{raw}`"),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sanity checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        if self.model_hidden_dim == 0 || !self.model_hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "model.hidden_dim must be positive and even, got {}",
                self.model_hidden_dim
            )));
        }
        if self.model_embed_dim == 0 {
            return Err(Error::Config("model.embed_dim must be positive".into()));
        }
        if self.vocab_max_size < 5 {
            return Err(Error::Config("vocab.max_size must be at least 5".into()));
        }
        if self.decode_beam_width == 0 || self.decode_max_len == 0 {
            return Err(Error::Config("decode settings must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.loss_gamma) {
            return Err(Error::Config("loss.gamma must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_embed) || !(0.0..1.0).contains(&self.dropout_rnn) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn.k must be at least 1".into()));
        }
        if self.sweep_min_hops > self.sweep_max_hops {
            return Err(Error::Config(
                "sweep.min_hops must not exceed sweep.max_hops".into(),
            ));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.loss_lambda,
            gamma: self.loss_gamma,
            alpha: self.loss_alpha,
            tf_base: self.tf_base,
            tf_decay: self.tf_decay,
            clip_norm: self.optim_clip,
            lr_pretrain: self.optim_lr_pretrain,
            lr_finetune: self.optim_lr_finetune,
            plateau_factor: self.train_plateau_factor,
            plateau_patience: self.train_plateau_patience,
            early_stop: self.train_early_stop,
            batch_size: self.train_batch_size,
            max_epochs: self.train_max_epochs,
            max_decode_len: self.decode_max_len,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.model_embed_dim,
            hidden_dim: self.model_hidden_dim,
            hops: self.gnn_hops,
            knn_k: self.knn_k,
            graph_kind: self.graph_kind,
            direction_order: self.gnn_direction_order,
            dan_enabled: self.model_use_dan,
            dropout_embed: self.dropout_embed,
            dropout_rnn: self.dropout_rnn,
        }
    }

    /// Canonical rendering of every tunable (paths excluded), the basis
    /// of the checkpoint's config hash.
    pub fn canonical_string(&self) -> String {
        format!(
            "seed={};graph.kind={:?};knn.k={};gnn.hops={};gnn.direction_order={:?};\
             model.embed_dim={};model.hidden_dim={};model.use_dan={};vocab.max_size={};\
             dropout.embed={};dropout.rnn={};decode.beam_width={};decode.max_len={};\
             loss.lambda={};loss.gamma={};loss.alpha={};optim.lr_pretrain={};\
             optim.lr_finetune={};optim.clip={};tf.base={};tf.decay={};\
             train.batch_size={};train.max_epochs={};train.plateau_factor={};\
             train.plateau_patience={};train.early_stop={}",
            self.seed,
            self.graph_kind,
            self.knn_k,
            self.gnn_hops,
            self.gnn_direction_order,
            self.model_embed_dim,
            self.model_hidden_dim,
            self.model_use_dan,
            self.vocab_max_size,
            self.dropout_embed,
            self.dropout_rnn,
            self.decode_beam_width,
            self.decode_max_len,
            self.loss_lambda,
            self.loss_gamma,
            self.loss_alpha,
            self.optim_lr_pretrain,
            self.optim_lr_finetune,
            self.optim_clip,
            self.tf_base,
            self.tf_decay,
            self.train_batch_size,
            self.train_max_epochs,
            self.train_plateau_factor,
            self.train_plateau_patience,
            self.train_early_stop,
        )
    }

    /// FNV-1a over the canonical string.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical_string().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.vocab_max_size, 70_000);
        assert_eq!(cfg.knn_k, 10);
        assert_eq!(cfg.gnn_hops, 3);
        assert_eq!(cfg.decode_beam_width, 5);
        assert_eq!(cfg.loss_lambda, 0.4);
        assert_eq!(cfg.loss_gamma, 0.99);
        assert_eq!(cfg.loss_alpha, 0.1);
        assert_eq!(cfg.optim_lr_pretrain, 0.001);
        assert_eq!(cfg.optim_lr_finetune, 0.00001);
        assert_eq!(cfg.optim_clip, 10.0);
        assert_eq!(cfg.tf_base, 0.75);
        assert_eq!(cfg.tf_decay, 0.9999);
        assert_eq!(cfg.dropout_embed, 0.4);
        assert_eq!(cfg.dropout_rnn, 0.3);
        assert_eq!(cfg.model_embed_dim, 300);
        assert_eq!(cfg.model_hidden_dim, 300);
        assert_eq!(cfg.train_plateau_factor, 0.5);
        assert_eq!(cfg.train_plateau_patience, 3);
        assert_eq!(cfg.train_early_stop, 10);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("gnn.hop", "3"), Err(Error::Config(_))));
        assert!(cfg.set("gnn.hops", "4").is_ok());
        assert_eq!(cfg.gnn_hops, 4);
    }

    #[test]
    fn file_parsing_with_comments_and_overrides() {
        let mut path = std::env::temp_dir();
        path.push(format!("g2sqg-cfg-{}.conf", std::process::id()));
        std::fs::write(
            &path,
            "# comment\n  gnn.hops = 2  # trailing\nseed=7\ndata.train = /tmp/x.jsonl\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.gnn_hops, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.data_train.as_deref(), Some(Path::new("/tmp/x.jsonl")));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn hash_tracks_tunables_but_not_paths() {
        let mut a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        a.data_train = Some(PathBuf::from("/elsewhere"));
        assert_eq!(a.hash(), b.hash(), "paths do not invalidate checkpoints");
        a.set("gnn.hops", "5").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("gnn.hops", "many").is_err());
        assert!(cfg.set("graph.kind", "weird").is_err());
        cfg.set("model.hidden_dim", "7").unwrap();
        assert!(cfg.validate().is_err(), "odd hidden dim rejected");
    }
}
