//! Two-stage training: mini-batch Adam on the joint cross-entropy of both
//! networks, then the translator on freshly generated representation pairs
//! of shared users, with validation-based early stopping.
//!
//! Three schedules are supported:
//!
//! * `alternating`: both stages every outer iteration (pairs regenerated);
//! * `separated`: networks to completion first, pairs generated once, then
//!   the translator;
//! * `end_to_end`: one objective, the translator loss back-propagating into
//!   the word embeddings.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::base_network::{scatter_mean_grad, EMBEDDING};
use crate::corpus::positives_from;
use crate::corpus::{with_negatives, Corpus, Domain, NewsArticle, TrainingExample, UserSplit};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalCase};
use crate::inference::NewsCache;
use crate::model::{Model, ModelConfig};
use crate::numeric::{adam_step, AdamConfig, AdamState, Gradients, ParameterSet};
use crate::rng;
use crate::translator::{is_translator_param, Translator, TranslatorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Alternating,
    Separated,
    EndToEnd,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [TrainMode::Alternating, TrainMode::Separated, TrainMode::EndToEnd];

    pub fn key(self) -> &'static str {
        match self {
            TrainMode::Alternating => "alternating",
            TrainMode::Separated => "separated",
            TrainMode::EndToEnd => "end_to_end",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (alternating|separated|end_to_end)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_iter: usize,
    pub patience: usize,
    /// Negatives drawn per positive.
    pub negative_ratio: usize,
    /// Weight of the translator loss in end-to-end mode.
    pub e2e_weight: f64,
    /// Fraction of shared users whose pairs train the translator.
    pub shared_fraction: f64,
    pub mode: TrainMode,
    pub seed: u64,
    /// Negatives per validation case.
    pub eval_negatives: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 256,
            max_iter: 50,
            patience: 10,
            negative_ratio: 1,
            e2e_weight: 1.0,
            shared_fraction: 1.0,
            mode: TrainMode::Alternating,
            seed: rng::DEFAULT_SEED,
            eval_negatives: evaluation::DEFAULT_NEGATIVES,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, "must be positive"))
            }
        };
        positive("train.lr", self.lr > 0.0)?;
        positive("train.batch_size", self.batch_size > 0)?;
        positive("train.max_iter", self.max_iter > 0)?;
        positive("train.patience", self.patience > 0)?;
        positive("train.negative_ratio", self.negative_ratio > 0)?;
        positive("eval.negatives", self.eval_negatives > 0)?;
        if self.patience > self.max_iter {
            return Err(Error::config("train.patience", "must not exceed train.max_iter"));
        }
        if !(self.shared_fraction > 0.0 && self.shared_fraction <= 1.0) {
            return Err(Error::config("transfer.shared_fraction", "must be in (0, 1]"));
        }
        if self.e2e_weight < 0.0 || !self.e2e_weight.is_finite() {
            return Err(Error::config("train.e2e_weight", "must be finite and non-negative"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// Shuffles with `rng` and cuts into batches of `batch_size`; the final
/// short batch is kept.
pub fn make_batches<T: Clone, R: Rng + ?Sized>(examples: &[T], batch_size: usize, rng: &mut R) -> Vec<Vec<T>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size.max(1))
        .map(|c| c.iter().map(|&i| examples[i].clone()).collect())
        .collect()
}

/// Positives, pair users and validation cases derived from a split.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub corpus: &'a Corpus,
    pub split: &'a UserSplit,
    pub history_len: usize,
    pub target_positives: Vec<TrainingExample>,
    pub source_positives: Vec<TrainingExample>,
    /// Shared train users whose pairs supervise the translator.
    pub pair_users: Vec<usize>,
    pub validation: Vec<EvalCase>,
}

impl<'a> TrainingData<'a> {
    /// Target positives come from train users with their validation read
    /// removed; source positives from every user.
    pub fn prepare(corpus: &'a Corpus, split: &'a UserSplit, history_len: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut target_positives = Vec::new();
        for &u in &split.train {
            let reads = target_training_reads(corpus, split, u);
            target_positives.extend(positives_from(u, &reads, history_len));
        }
        let source_positives: Vec<TrainingExample> = corpus
            .histories(Domain::Source)
            .flat_map(|h| positives_from(h.user, &h.articles().collect::<Vec<_>>(), history_len))
            .collect();

        let mut shared: Vec<usize> = split
            .train
            .iter()
            .copied()
            .filter(|&u| corpus.history(u, Domain::Source).is_some() && !target_training_reads(corpus, split, u).is_empty())
            .collect();
        if config.shared_fraction < 1.0 {
            shared.shuffle(&mut rng::stream(config.seed, "pair-users"));
            let keep = ((config.shared_fraction * shared.len() as f64).ceil() as usize).min(shared.len());
            shared.truncate(keep);
            shared.sort_unstable();
        }
        let validation = evaluation::build_validation_cases(
            split,
            corpus,
            Domain::Target,
            history_len,
            config.eval_negatives,
            config.seed,
        )?;
        Ok(TrainingData {
            corpus,
            split,
            history_len,
            target_positives,
            source_positives,
            pair_users: shared,
            validation,
        })
    }

    /// Source and target histories (latest L reads) of each pair user.
    pub fn pair_histories(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        self.pair_users
            .iter()
            .map(|&u| {
                let src: Vec<usize> = self.corpus.history(u, Domain::Source).map(|h| h.articles().collect()).unwrap_or_default();
                let tgt = target_training_reads(self.corpus, self.split, u);
                (latest(&src, self.history_len), latest(&tgt, self.history_len))
            })
            .collect()
    }
}

fn latest(reads: &[usize], n: usize) -> Vec<usize> {
    reads[reads.len().saturating_sub(n)..].to_vec()
}

/// Target reads of a user minus the held-out validation read.
fn target_training_reads(corpus: &Corpus, split: &UserSplit, user: usize) -> Vec<usize> {
    let Some(h) = corpus.history(user, Domain::Target) else {
        return Vec::new();
    };
    let mut reads: Vec<usize> = h.articles().collect();
    if let Some(&pos) = split.validation.get(&user) {
        reads.truncate(pos);
    }
    reads
}

/// Per-iteration record of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Mean per-example cross-entropy of the target and source epochs.
    pub loss_target: f64,
    pub loss_source: f64,
    /// Mean translator loss over the epoch's pair batches (NaN if none).
    pub loss_translator: f64,
    pub val_auc: f64,
    pub seconds: f64,
    /// Network checkpoint hash around the translator stage (two-stage modes).
    pub network_hash_before_translator: Option<String>,
    pub network_hash_after_translator: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterationRecord>,
    pub transfer_disabled: bool,
}

impl TrainLog {
    /// `iter<TAB>loss_T<TAB>loss_S<TAB>loss_F<TAB>val_AUC<TAB>seconds` per iteration.
    pub fn format(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.2}\t{:.3}",
                r.iter, r.loss_target, r.loss_source, r.loss_translator, r.val_auc, r.seconds
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the best validation iteration.
    pub model: Model,
    pub log: TrainLog,
    pub best_iteration: usize,
    pub best_hash: String,
    /// Last iteration that ran.
    pub stopped_at: usize,
    /// How many times translator pairs were generated from the networks.
    pub pair_generations: usize,
}

/// Validation AUC (percent) of the warm target network on held-out reads.
pub fn validation_auc(model: &Model, data: &TrainingData) -> Result<f64> {
    if data.validation.is_empty() {
        return Ok(f64::NAN);
    }
    let cache = NewsCache::new(model, data.corpus, Domain::Target)?;
    let (report, _) = evaluation::evaluate(&data.validation, |case, ids| cache.score_history(&case.history, ids))?;
    Ok(report.auc)
}

/// Trains with the mode in `config`, early-stopping on validation AUC.
pub fn fit(model_config: &ModelConfig, config: &TrainConfig, data: &TrainingData) -> Result<FitOutcome> {
    let mut validator = |_: usize, m: &Model| validation_auc(m, data);
    fit_with_validator(model_config, config, data, &mut validator)
}

pub fn fit_separated(model_config: &ModelConfig, config: &TrainConfig, data: &TrainingData) -> Result<FitOutcome> {
    let config = TrainConfig {
        mode: TrainMode::Separated,
        ..config.clone()
    };
    fit(model_config, &config, data)
}

pub fn fit_end_to_end(model_config: &ModelConfig, config: &TrainConfig, data: &TrainingData) -> Result<FitOutcome> {
    let config = TrainConfig {
        mode: TrainMode::EndToEnd,
        ..config.clone()
    };
    fit(model_config, &config, data)
}

/// [`fit`] with a caller-supplied validation metric (higher is better).
pub fn fit_with_validator(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &TrainingData,
    validator: &mut dyn FnMut(usize, &Model) -> Result<f64>,
) -> Result<FitOutcome> {
    config.validate()?;
    let model = Model::init(model_config.clone(), data.corpus.vocab().len(), config.seed)?;
    let mut trainer = Trainer {
        config,
        data,
        model,
        net_adam: AdamState::new(),
        tr_adam: AdamState::new(),
        pair_generations: 0,
    };
    let mut log = TrainLog {
        records: Vec::new(),
        transfer_disabled: data.pair_users.is_empty(),
    };
    if log.transfer_disabled {
        warn!("no shared users with histories in both domains: transfer disabled");
    }
    let translate_each_iter = config.mode == TrainMode::Alternating && !log.transfer_disabled;

    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let mut stopped_at = 0;
    for iter in 1..=config.max_iter {
        let start = Instant::now();
        let (loss_target, loss_source, loss_e2e) = trainer.network_epoch(iter)?;
        let mut rec = IterationRecord {
            iter,
            loss_target,
            loss_source,
            loss_translator: loss_e2e,
            val_auc: f64::NAN,
            seconds: 0.0,
            network_hash_before_translator: None,
            network_hash_after_translator: None,
        };
        if translate_each_iter {
            let before = trainer.model.network_hash();
            let pairs = trainer.generate_pairs()?;
            rec.loss_translator = trainer.translator_epoch(&pairs, iter)?;
            rec.network_hash_before_translator = Some(before);
            rec.network_hash_after_translator = Some(trainer.model.network_hash());
        }
        rec.val_auc = validator(iter, &trainer.model)?;
        rec.seconds = start.elapsed().as_secs_f64();
        info!(
            "iter {iter}: loss_T {:.4} loss_S {:.4} loss_F {:.5} val {:.2}",
            rec.loss_target, rec.loss_source, rec.loss_translator, rec.val_auc
        );
        let improved = match &best {
            None => true,
            Some((b, _, _)) => rec.val_auc > *b,
        };
        log.records.push(rec);
        stopped_at = iter;
        if improved {
            best = Some((log.records[iter - 1].val_auc, iter, trainer.model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                info!("early stop at iteration {iter}");
                break;
            }
        }
    }
    let (_, best_iteration, best_model) = best.expect("max_iter > 0");
    trainer.model = best_model;

    if config.mode == TrainMode::Separated && !log.transfer_disabled {
        let pairs = trainer.generate_pairs()?;
        for epoch in 1..=stopped_at {
            let before = trainer.model.network_hash();
            let loss = trainer.translator_epoch(&pairs, epoch)?;
            let rec = &mut log.records[epoch - 1];
            rec.loss_translator = loss;
            rec.network_hash_before_translator = Some(before);
            rec.network_hash_after_translator = Some(trainer.model.network_hash());
        }
    }
    Ok(FitOutcome {
        best_hash: trainer.model.hash(),
        model: trainer.model,
        log,
        best_iteration,
        stopped_at,
        pair_generations: trainer.pair_generations,
    })
}

/// Trains a fresh translator for `spec` on pairs from fixed networks, for
/// `epochs` passes. The networks are not modified.
pub fn train_translator_only(
    model: &Model,
    spec: TranslatorSpec,
    config: &TrainConfig,
    data: &TrainingData,
    epochs: usize,
) -> Result<(Model, Vec<f64>)> {
    let mut m = model.clone();
    m.reset_translator(spec, config.seed)?;
    let mut trainer = Trainer {
        config,
        data,
        model: m,
        net_adam: AdamState::new(),
        tr_adam: AdamState::new(),
        pair_generations: 0,
    };
    let pairs = trainer.generate_pairs()?;
    let losses = (1..=epochs)
        .map(|e| trainer.translator_epoch(&pairs, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((trainer.model, losses))
}

/// Representation pairs `(phi_S(u), phi_T(u))` of the pair users.
pub fn representation_pairs(model: &Model, data: &TrainingData) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    data.pair_histories()
        .iter()
        .map(|(s, t)| {
            Ok((
                model.mean_representation(Domain::Source, data.corpus.articles(), s)?,
                model.mean_representation(Domain::Target, data.corpus.articles(), t)?,
            ))
        })
        .collect()
}

/// `weight * translator loss` over pairs computed from the current
/// embeddings; with `grads`, the gradient also flows through both mean
/// representations into the embedding rows.
pub fn pair_loss(
    params: &ParameterSet,
    spec: &TranslatorSpec,
    articles: &[NewsArticle],
    histories: &[(Vec<usize>, Vec<usize>)],
    weight: f64,
    grads: Option<&mut Gradients>,
) -> Result<f64> {
    let model_view = |d: Domain| crate::base_network::BaseNetwork::new(params, d);
    let (src_net, tgt_net) = (model_view(Domain::Source)?, model_view(Domain::Target)?);
    let mean = |net: &crate::base_network::BaseNetwork, h: &[usize]| -> Result<Vec<f64>> {
        let reprs = h.iter().map(|&a| net.news_encode(&articles[a].tokens)).collect::<Result<Vec<_>>>()?;
        net.user_encode_unconditioned(&reprs)
    };
    let pairs = histories
        .iter()
        .map(|(s, t)| Ok((mean(&src_net, s)?, mean(&tgt_net, t)?)))
        .collect::<Result<Vec<_>>>()?;
    let tr = Translator::new(params, spec)?;
    let Some(g) = grads else {
        return Ok(weight * tr.loss(&pairs)?);
    };
    let (loss, input_grads) = tr.loss_grad(&pairs, weight, Some(g))?;
    let emb = g.slot(EMBEDDING, params.require(EMBEDDING)?.dims());
    for ((s, t), (ds, dt)) in histories.iter().zip(&input_grads) {
        for (hist, d) in [(s, ds), (t, dt)] {
            let share: Vec<f64> = d.iter().map(|v| v / hist.len() as f64).collect();
            for &a in hist {
                scatter_mean_grad(emb, &articles[a].tokens, &share);
            }
        }
    }
    Ok(loss)
}

struct Trainer<'c, 'd> {
    config: &'c TrainConfig,
    data: &'c TrainingData<'d>,
    model: Model,
    net_adam: AdamState,
    tr_adam: AdamState,
    pair_generations: usize,
}

impl Trainer<'_, '_> {
    fn examples(&self, domain: Domain, iter: usize) -> Result<Vec<TrainingExample>> {
        let corpus = self.data.corpus;
        let positives = match domain {
            Domain::Source => &self.data.source_positives,
            Domain::Target => &self.data.target_positives,
        };
        let mut r = rng::indexed_stream(self.config.seed, &format!("negatives/{domain}"), iter as u64);
        with_negatives(
            positives,
            corpus.domain_articles(domain),
            self.config.negative_ratio,
            |u| {
                corpus
                    .history(u, domain)
                    .map(|h| h.articles().collect::<HashSet<_>>())
                    .unwrap_or_default()
            },
            &mut r,
        )
    }

    /// One pass over both domains, batches interleaved T, S, T, S, ...;
    /// in end-to-end mode a translator batch follows each pair.
    fn network_epoch(&mut self, iter: usize) -> Result<(f64, f64, f64)> {
        let seed = self.config.seed;
        let bs = self.config.batch_size;
        let target = self.examples(Domain::Target, iter)?;
        let source = self.examples(Domain::Source, iter)?;
        let t_batches = make_batches(&target, bs, &mut rng::indexed_stream(seed, "shuffle/T", iter as u64));
        let s_batches = make_batches(&source, bs, &mut rng::indexed_stream(seed, "shuffle/S", iter as u64));

        let e2e = self.config.mode == TrainMode::EndToEnd && self.config.e2e_weight > 0.0 && !self.data.pair_users.is_empty();
        let pair_batches = if e2e {
            let hist = self.data.pair_histories();
            make_batches(&hist, bs, &mut rng::indexed_stream(seed, "shuffle/F", iter as u64))
        } else {
            Vec::new()
        };

        let adam = self.config.adam();
        let articles = self.data.corpus.articles();
        let (mut sum_t, mut sum_s, mut sum_f) = (0.0, 0.0, 0.0);
        let steps = t_batches.len().max(s_batches.len()).max(pair_batches.len());
        for i in 0..steps {
            for (domain, batches, sum) in [
                (Domain::Target, &t_batches, &mut sum_t),
                (Domain::Source, &s_batches, &mut sum_s),
            ] {
                let Some(batch) = batches.get(i) else { continue };
                let mut g = Gradients::new();
                let loss = self.model.network(domain)?.batch_loss(articles, batch, 1.0, Some(&mut g))?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        name: format!("loss_{domain}"),
                        index: iter,
                        value: loss,
                    });
                }
                *sum += loss;
                adam_step(&mut self.model.params, &g, &mut self.net_adam, &adam)?;
            }
            if let Some(batch) = pair_batches.get(i) {
                let mut g = Gradients::new();
                let loss = pair_loss(
                    &self.model.params,
                    &self.model.config.translator,
                    articles,
                    batch,
                    self.config.e2e_weight,
                    Some(&mut g),
                )?;
                sum_f += loss / self.config.e2e_weight;
                adam_step(&mut self.model.params, &g, &mut self.net_adam, &adam)?;
            }
        }
        let loss_f = if pair_batches.is_empty() {
            f64::NAN
        } else {
            sum_f / pair_batches.len() as f64
        };
        Ok((sum_t / target.len().max(1) as f64, sum_s / source.len().max(1) as f64, loss_f))
    }

    fn generate_pairs(&mut self) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        self.pair_generations += 1;
        representation_pairs(&self.model, self.data)
    }

    /// One pass of mini-batch Adam over `pairs`, translator parameters only.
    fn translator_epoch(&mut self, pairs: &[(Vec<f64>, Vec<f64>)], epoch: usize) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(f64::NAN);
        }
        let batches = make_batches(
            pairs,
            self.config.batch_size,
            &mut rng::indexed_stream(self.config.seed, "shuffle/pairs", epoch as u64),
        );
        let adam = self.config.adam();
        let mut total = 0.0;
        for batch in &batches {
            let mut g = Gradients::new();
            let spec = self.model.config.translator.clone();
            let (loss, _) = Translator::new(&self.model.params, &spec)?.loss_grad(batch, 1.0, Some(&mut g))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    name: "loss_F".into(),
                    index: epoch,
                    value: loss,
                });
            }
            total += loss;
            debug_assert!(g.names().all(is_translator_param));
            if !g.is_empty() {
                adam_step(&mut self.model.params, &g, &mut self.tr_adam, &adam)?;
            }
        }
        Ok(total / batches.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_keep_the_short_tail() {
        let xs: Vec<u32> = (0..10).collect();
        let b = make_batches(&xs, 4, &mut rng::stream(1, "t"));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<u32> = b.concat();
        all.sort_unstable();
        assert_eq!(all, xs);
    }

    #[test]
    fn same_seed_same_order() {
        let xs: Vec<u32> = (0..50).collect();
        let a = make_batches(&xs, 7, &mut rng::indexed_stream(3, "shuffle", 4));
        let b = make_batches(&xs, 7, &mut rng::indexed_stream(3, "shuffle", 4));
        let c = make_batches(&xs, 7, &mut rng::indexed_stream(3, "shuffle", 5));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn shuffles_are_uniform_over_permutations() {
        // 24 permutations of 4 elements over 10^4 epochs.
        let xs = [0u8, 1, 2, 3];
        let mut counts = std::collections::HashMap::new();
        let epochs = 10_000;
        for e in 0..epochs {
            let b = make_batches(&xs, 4, &mut rng::indexed_stream(11, "shuffle", e));
            *counts.entry(b[0].clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = epochs as f64 / 24.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square(23) upper 0.1% quantile is 49.73.
        assert!(chi2 < 49.73, "chi2 = {chi2}");
    }

    #[test]
    fn config_validation_names_keys() {
        let c = TrainConfig {
            patience: 60,
            ..TrainConfig::default()
        };
        match c.validate().unwrap_err() {
            Error::Config { key, .. } => assert_eq!(key, "train.patience"),
            e => panic!("{e:?}"),
        }
        assert!(TrainMode::from_str("sideways").is_err());
        assert_eq!(TrainMode::from_str("end_to_end").unwrap(), TrainMode::EndToEnd);
    }
}
