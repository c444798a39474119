//! Flat `key=value` run configuration with namespaced keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! unparsable values are errors that name the key.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthetic::SynthConfig;
use crate::training::TrainConfig;
use crate::translator::TransferStrategy;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Corpus directory; the command's output directory when unset.
    pub dir: Option<PathBuf>,
    pub min_count: usize,
    pub shared_vocabulary: bool,
    /// Fraction of users assigned to training.
    pub train_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            min_count: 1,
            shared_vocabulary: true,
            train_ratio: 0.9,
        }
    }
}

/// Optional raw MIND input for `prepare`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MindConfig {
    pub news: Option<PathBuf>,
    pub behaviors: Option<PathBuf>,
    pub source_category: String,
    pub target_category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed from the file, if given.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub mind: MindConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Test users sampled for the attention case study.
    pub case_study_users: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            data: DataConfig::default(),
            mind: MindConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            case_study_users: 3,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "data.dir",
    "data.min_count",
    "data.shared_vocabulary",
    "data.train_ratio",
    "data.mind.news",
    "data.mind.behaviors",
    "data.mind.source_category",
    "data.mind.target_category",
    "model.dim",
    "model.cf_hidden",
    "model.history_len",
    "transfer.strategy",
    "transfer.hidden_layers",
    "transfer.hidden_width",
    "transfer.ortho_lambda",
    "transfer.shared_fraction",
    "train.lr",
    "train.batch_size",
    "train.max_iter",
    "train.patience",
    "train.negative_ratio",
    "train.mode",
    "train.e2e_weight",
    "eval.negatives",
    "eval.case_study_users",
    "synth.users",
    "synth.latent_dim",
    "synth.source_vocab",
    "synth.target_vocab",
    "synth.overlap",
    "synth.topics",
    "synth.articles_per_domain",
    "synth.words_per_article",
    "synth.topic_mass",
    "synth.beta",
    "synth.map",
    "synth.events_per_user",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::config(key, format!("invalid value `{raw}`: {e}")))
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|p| value(key, p.trim())).collect()
}

impl RunConfig {
    /// Parses config text. Keys may appear in any order; `model.dim` is
    /// applied before the translator keys that depend on it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", i + 1), format!("expected key=value, got `{line}`")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::config(&k, "unknown key"));
            }
            if entries.iter().any(|(e, _)| *e == k) {
                return Err(Error::config(&k, "given twice"));
            }
            entries.push((k, v));
        }
        entries.sort_by_key(|(k, _)| u8::from(k != "model.dim"));
        let mut c = RunConfig::default();
        for (k, v) in &entries {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.model.translator;
        match key {
            "seed" => {
                let seed = value(key, raw)?;
                self.seed = Some(seed);
                self.train.seed = seed;
                self.synth.seed = seed;
            }
            "data.dir" => self.data.dir = Some(PathBuf::from(raw)),
            "data.min_count" => self.data.min_count = value(key, raw)?,
            "data.shared_vocabulary" => self.data.shared_vocabulary = value(key, raw)?,
            "data.train_ratio" => self.data.train_ratio = value(key, raw)?,
            "data.mind.news" => self.mind.news = Some(PathBuf::from(raw)),
            "data.mind.behaviors" => self.mind.behaviors = Some(PathBuf::from(raw)),
            "data.mind.source_category" => self.mind.source_category = raw.to_string(),
            "data.mind.target_category" => self.mind.target_category = raw.to_string(),
            "model.dim" => self.model = self.model.clone().with_dim(value(key, raw)?),
            "model.cf_hidden" => self.model.cf_hidden = list(key, raw)?,
            "model.history_len" => self.model.history_len = value(key, raw)?,
            "transfer.strategy" => t.strategy = value::<TransferStrategy>(key, raw)?,
            "transfer.hidden_layers" => t.hidden_layers = value(key, raw)?,
            "transfer.hidden_width" => t.hidden_width = value(key, raw)?,
            "transfer.ortho_lambda" => t.ortho_lambda = value(key, raw)?,
            "transfer.shared_fraction" => self.train.shared_fraction = value(key, raw)?,
            "train.lr" => self.train.lr = value(key, raw)?,
            "train.batch_size" => self.train.batch_size = value(key, raw)?,
            "train.max_iter" => self.train.max_iter = value(key, raw)?,
            "train.patience" => self.train.patience = value(key, raw)?,
            "train.negative_ratio" => self.train.negative_ratio = value(key, raw)?,
            "train.mode" => self.train.mode = value(key, raw)?,
            "train.e2e_weight" => self.train.e2e_weight = value(key, raw)?,
            "eval.negatives" => self.train.eval_negatives = value(key, raw)?,
            "eval.case_study_users" => self.case_study_users = value(key, raw)?,
            "synth.users" => self.synth.users = value(key, raw)?,
            "synth.latent_dim" => self.synth.latent_dim = value(key, raw)?,
            "synth.source_vocab" => self.synth.source_vocab = value(key, raw)?,
            "synth.target_vocab" => self.synth.target_vocab = value(key, raw)?,
            "synth.overlap" => self.synth.overlap = value(key, raw)?,
            "synth.topics" => self.synth.topics = value(key, raw)?,
            "synth.articles_per_domain" => self.synth.articles_per_domain = value(key, raw)?,
            "synth.words_per_article" => self.synth.words_per_article = value(key, raw)?,
            "synth.topic_mass" => self.synth.topic_mass = value(key, raw)?,
            "synth.beta" => self.synth.beta = value(key, raw)?,
            "synth.map" => self.synth.map = value(key, raw)?,
            "synth.events_per_user" => self.synth.events_per_user = value(key, raw)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.dim == 0 {
            return Err(Error::config("model.dim", "must be positive"));
        }
        if self.model.history_len == 0 {
            return Err(Error::config("model.history_len", "must be positive"));
        }
        if self.model.cf_hidden.contains(&0) {
            return Err(Error::config("model.cf_hidden", "widths must be positive"));
        }
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(Error::config("data.train_ratio", "must be in (0, 1)"));
        }
        if self.data.min_count == 0 {
            return Err(Error::config("data.min_count", "must be positive"));
        }
        self.train.validate()?;
        self.synth.validate()
    }

    /// Seed precedence: explicit override, then the file, then the default.
    pub fn resolve_seed(&mut self, cli: Option<u64>) -> u64 {
        let seed = cli.or(self.seed).unwrap_or(crate::rng::DEFAULT_SEED);
        self.seed = Some(seed);
        self.train.seed = seed;
        self.synth.seed = seed;
        seed
    }

    /// Writes the config back in `key=value` form; `parse` reads it back.
    pub fn to_text(&self) -> String {
        let t = &self.model.translator;
        let mut lines = Vec::new();
        let mut put = |k: &str, v: String| lines.push(format!("{k}={v}"));
        if let Some(s) = self.seed {
            put("seed", s.to_string());
        }
        if let Some(d) = &self.data.dir {
            put("data.dir", d.display().to_string());
        }
        put("data.min_count", self.data.min_count.to_string());
        put("data.shared_vocabulary", self.data.shared_vocabulary.to_string());
        put("data.train_ratio", self.data.train_ratio.to_string());
        put("model.dim", self.model.dim.to_string());
        put(
            "model.cf_hidden",
            self.model.cf_hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        put("model.history_len", self.model.history_len.to_string());
        put("transfer.strategy", t.strategy.to_string());
        put("transfer.hidden_layers", t.hidden_layers.to_string());
        put("transfer.hidden_width", t.hidden_width.to_string());
        put("transfer.ortho_lambda", t.ortho_lambda.to_string());
        put("transfer.shared_fraction", self.train.shared_fraction.to_string());
        put("train.lr", self.train.lr.to_string());
        put("train.batch_size", self.train.batch_size.to_string());
        put("train.max_iter", self.train.max_iter.to_string());
        put("train.patience", self.train.patience.to_string());
        put("train.negative_ratio", self.train.negative_ratio.to_string());
        put("train.mode", self.train.mode.to_string());
        put("train.e2e_weight", self.train.e2e_weight.to_string());
        put("eval.negatives", self.train.eval_negatives.to_string());
        put("eval.case_study_users", self.case_study_users.to_string());
        let s = &self.synth;
        put("synth.users", s.users.to_string());
        put("synth.latent_dim", s.latent_dim.to_string());
        put("synth.source_vocab", s.source_vocab.to_string());
        put("synth.target_vocab", s.target_vocab.to_string());
        put("synth.overlap", s.overlap.to_string());
        put("synth.topics", s.topics.to_string());
        put("synth.articles_per_domain", s.articles_per_domain.to_string());
        put("synth.words_per_article", s.words_per_article.to_string());
        put("synth.topic_mass", s.topic_mass.to_string());
        put("synth.beta", s.beta.to_string());
        put("synth.map", s.map.to_string());
        put("synth.events_per_user", s.events_per_user.to_string());
        lines.join("\n") + "\n"
    }
}
