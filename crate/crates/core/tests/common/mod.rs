#![allow(dead_code)]

use trnews::config::RunConfig;
use trnews::pipeline::{self, Prepared};
use trnews::synthetic::{self, SynthConfig};

/// Config text for a corpus small enough to train in about a second.
pub const SMALL_CONFIG: &str = "\
model.dim = 8
model.history_len = 3
model.cf_hidden = 16,8
train.max_iter = 6
train.patience = 3
train.batch_size = 64
eval.negatives = 20
synth.users = 40
synth.latent_dim = 4
synth.source_vocab = 60
synth.target_vocab = 60
synth.topics = 8
synth.articles_per_domain = 60
synth.words_per_article = 6
synth.events_per_user = 12
";

pub fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::parse(SMALL_CONFIG).expect("valid config");
    cfg.resolve_seed(Some(seed));
    cfg
}

/// Generates the configured synthetic corpus in memory and prepares it.
pub fn synth_prepared(cfg: &RunConfig) -> Prepared {
    let s = synthetic::generate(&SynthConfig {
        seed: cfg.train.seed,
        ..cfg.synth.clone()
    })
    .expect("synthetic corpus");
    pipeline::prepare_records(cfg, &s.news, &s.events).expect("prepared corpus")
}
