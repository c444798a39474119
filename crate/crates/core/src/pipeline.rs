//! End-to-end steps shared by the command line and the Python bindings.
//! Each `run_*` function reads its inputs from disk, writes its artifacts
//! into an output directory and returns what it wrote.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;

use crate::base_network::{joint_loss, joint_loss_grad, EMBEDDING};
use crate::config::RunConfig;
use crate::corpus::io::{read_corpus_dir, write_corpus_dir, write_file, SPLIT_FILE, VOCAB_FILE};
use crate::corpus::{self, mind, split_users, with_negatives, Corpus, CorpusOptions, Domain, TrainingExample, UserSplit};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalCase, MetricsReport};
use crate::inference::{translate_user, NewsCache};
use crate::model::Model;
use crate::numeric::gradcheck::{compare, finite_difference_gradient, roundoff_floor, GradCheckReport, DEFAULT_EPS};
use crate::numeric::{Gradients, ParameterSet, Tensor};
use crate::rng;
use crate::synthetic::{self, SynthConfig, SynthCorpus};
use crate::training::{self, pair_loss, FitOutcome, TrainMode, TrainingData};
use crate::translator::{init_translator, is_translator_param, TransferStrategy, Translator, TranslatorSpec};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_KV_FILE: &str = "metrics.txt";
pub const BASELINE_FILE: &str = "baseline.tsv";
pub const ABLATION_FILE: &str = "ablation.tsv";
pub const GRADCHECK_FILE: &str = "gradcheck.tsv";
pub const CASE_STUDY_FILE: &str = "case_study.tsv";

/// Largest relative error a gradient check tolerates.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Corpus plus the user split derived from the run seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: Corpus,
    pub split: UserSplit,
}

fn seed_of(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or(rng::DEFAULT_SEED)
}

pub fn corpus_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.data.dir.clone().unwrap_or_else(|| out.to_path_buf())
}

pub fn corpus_options(cfg: &RunConfig) -> CorpusOptions {
    CorpusOptions {
        min_count: cfg.data.min_count,
        shared_vocabulary: cfg.data.shared_vocabulary,
    }
}

/// Builds the corpus in `dir` and splits its users.
pub fn load_prepared(cfg: &RunConfig, dir: &Path) -> Result<Prepared> {
    let (news, events) = read_corpus_dir(dir)?;
    prepare_records(cfg, &news, &events)
}

pub fn prepare_records(cfg: &RunConfig, news: &[corpus::NewsRecord], events: &[corpus::EventRecord]) -> Result<Prepared> {
    let corpus = Corpus::build(news, events, &corpus_options(cfg))?;
    let users: Vec<usize> = (0..corpus.users().len()).collect();
    let mut split = split_users(&users, cfg.data.train_ratio, seed_of(cfg))?;
    split.reserve_validation(&corpus, Domain::Target);
    Ok(Prepared { corpus, split })
}

pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<SynthCorpus> {
    let synth = synthetic::generate(&SynthConfig {
        seed: seed_of(cfg),
        ..cfg.synth.clone()
    })?;
    synth.write(out)?;
    info!("wrote {} articles and {} events to {}", synth.news.len(), synth.events.len(), out.display());
    Ok(synth)
}

/// Converts MIND input when configured, then writes the vocabulary and the
/// user split next to the corpus.
pub fn run_prepare(cfg: &RunConfig, out: &Path) -> Result<Prepared> {
    let prepared = match (&cfg.mind.news, &cfg.mind.behaviors) {
        (Some(n), Some(b)) => {
            let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
            let (news, events) = mind::convert(&read(n)?, &read(b)?, &cfg.mind.source_category, &cfg.mind.target_category)?;
            write_corpus_dir(out, &news, &events)?;
            prepare_records(cfg, &news, &events)?
        }
        (None, None) => load_prepared(cfg, &corpus_dir(cfg, out))?,
        _ => {
            return Err(Error::config(
                "data.mind.behaviors",
                "data.mind.news and data.mind.behaviors must be given together",
            ))
        }
    };
    write_file(&out.join(VOCAB_FILE), &prepared.corpus.vocab().dump())?;
    write_file(&out.join(SPLIT_FILE), &prepared.split.dump(&prepared.corpus))?;
    Ok(prepared)
}

/// Trains on a prepared corpus without touching the file system.
pub fn train_prepared(cfg: &RunConfig, prepared: &Prepared) -> Result<FitOutcome> {
    let data = TrainingData::prepare(&prepared.corpus, &prepared.split, cfg.model.history_len, &cfg.train)?;
    training::fit(&cfg.model, &cfg.train, &data)
}

pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<FitOutcome> {
    let prepared = load_prepared(cfg, &corpus_dir(cfg, out))?;
    let outcome = train_prepared(cfg, &prepared)?;
    outcome.model.save(&out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(LOG_FILE), &outcome.log.format())?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_text())?;
    info!(
        "best iteration {} of {}, checkpoint {}",
        outcome.best_iteration,
        outcome.stopped_at,
        &outcome.best_hash[..12]
    );
    Ok(outcome)
}

/// One case per target read (after the first) of every test user.
pub fn cold_start_cases(cfg: &RunConfig, prepared: &Prepared) -> Result<Vec<EvalCase>> {
    let cases = evaluation::build_eval_cases(
        &prepared.split.test,
        &prepared.corpus,
        Domain::Target,
        cfg.model.history_len,
        cfg.train.eval_negatives,
        seed_of(cfg),
        "eval-negatives",
    )?;
    let (kept, dropped): (Vec<EvalCase>, Vec<EvalCase>) = cases
        .into_iter()
        .partition(|c| prepared.corpus.history(c.user, Domain::Source).is_some());
    if !dropped.is_empty() {
        warn!("{} cases skipped: users without source history", dropped.len());
    }
    Ok(kept)
}

/// Scores every case with the user's translated source representation.
pub fn evaluate_cold_start(model: &Model, corpus: &Corpus, cases: &[EvalCase]) -> Result<MetricsReport> {
    let cache = NewsCache::new(model, corpus, Domain::Target)?;
    let mut reprs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let (report, _) = evaluation::evaluate(cases, |case, ids| {
        let repr = match reprs.entry(case.user) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(translate_user(model, corpus, case.user, None)?),
        };
        cache.score_fixed(repr, ids)
    })?;
    Ok(report)
}

/// No-transfer reference: every user is the zero vector in the target domain.
pub fn evaluate_zero_baseline(model: &Model, corpus: &Corpus, cases: &[EvalCase]) -> Result<MetricsReport> {
    let cache = NewsCache::new(model, corpus, Domain::Target)?;
    let zero = vec![0.0; model.config.dim];
    Ok(evaluation::evaluate(cases, |_, ids| cache.score_fixed(&zero, ids))?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub model: MetricsReport,
    pub baseline: MetricsReport,
}

pub fn evaluate_prepared(cfg: &RunConfig, prepared: &Prepared, model: &Model) -> Result<Evaluation> {
    let cases = cold_start_cases(cfg, prepared)?;
    Ok(Evaluation {
        model: evaluate_cold_start(model, &prepared.corpus, &cases)?,
        baseline: evaluate_zero_baseline(model, &prepared.corpus, &cases)?,
    })
}

fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_file(path, &format!("{}\n{}\n", MetricsReport::header(), report.row()))
}

pub fn run_evaluate(cfg: &RunConfig, out: &Path) -> Result<Evaluation> {
    let model = Model::load(cfg.model.clone(), &out.join(CHECKPOINT_FILE))?;
    let prepared = load_prepared(cfg, &corpus_dir(cfg, out))?;
    let eval = evaluate_prepared(cfg, &prepared, &model)?;
    write_report(&out.join(METRICS_FILE), &eval.model)?;
    write_file(&out.join(METRICS_KV_FILE), &eval.model.key_values())?;
    write_report(&out.join(BASELINE_FILE), &eval.baseline)?;
    Ok(eval)
}

/// One configuration of the ablation grid.
#[derive(Debug, Clone)]
pub struct Variant {
    pub group: &'static str,
    pub value: String,
    pub config: RunConfig,
}

impl Variant {
    pub fn name(&self) -> String {
        format!("{}={}", self.group, self.value)
    }
}

pub const HISTORY_SWEEP: [usize; 5] = [3, 5, 10, 15, 20];
pub const DIM_SWEEP: [usize; 5] = [32, 64, 100, 128, 200];
pub const SHARED_USER_SWEEP: [u32; 4] = [90, 70, 50, 30];

/// The full ablation grid around `base`.
pub fn ablation_variants(base: &RunConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    let mut add = |group, value: String, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        out.push(Variant { group, value, config });
    };
    for s in TransferStrategy::ALL {
        add("strategy", s.key().into(), &|c| c.model.translator.strategy = s);
    }
    for on in [true, false] {
        add("sharing", if on { "on" } else { "off" }.into(), &|c| c.data.shared_vocabulary = on);
    }
    for m in [TrainMode::Alternating, TrainMode::Separated] {
        add("schedule", m.key().into(), &|c| c.train.mode = m);
    }
    add("learning", "two_stage".into(), &|c| c.train.mode = TrainMode::Alternating);
    add("learning", "end_to_end".into(), &|c| c.train.mode = TrainMode::EndToEnd);
    for l in HISTORY_SWEEP {
        add("history", l.to_string(), &|c| c.model.history_len = l);
    }
    for d in DIM_SWEEP {
        add("dim", d.to_string(), &|c| {
            let strategy = c.model.translator.strategy;
            c.model = c.model.clone().with_dim(d).with_strategy(strategy);
        });
    }
    for p in SHARED_USER_SWEEP {
        add("shared_users", p.to_string(), &|c| c.train.shared_fraction = f64::from(p) / 100.0);
    }
    out
}

/// Trains and evaluates each selected variant in its own subdirectory and
/// writes a combined table. `filter` matches a group or a full variant name.
pub fn run_ablate(cfg: &RunConfig, out: &Path, filter: Option<&str>) -> Result<Vec<(String, MetricsReport)>> {
    let variants: Vec<Variant> = ablation_variants(cfg)
        .into_iter()
        .filter(|v| filter.is_none_or(|f| f == v.group || f == v.name()))
        .collect();
    if variants.is_empty() {
        return Err(Error::config("--variant", format!("no variant matches `{}`", filter.unwrap_or(""))));
    }
    let dir = corpus_dir(cfg, out);
    let (news, events) = read_corpus_dir(&dir)?;
    let mut rows = Vec::new();
    let mut table = format!("variant\t{}\n", MetricsReport::header());
    for v in variants {
        let name = v.name();
        info!("ablation variant {name}");
        let vdir = out.join(v.group).join(&v.value);
        let prepared = prepare_records(&v.config, &news, &events)?;
        let fit = train_prepared(&v.config, &prepared)?;
        let eval = evaluate_prepared(&v.config, &prepared, &fit.model)?;
        write_report(&vdir.join(METRICS_FILE), &eval.model)?;
        write_file(&vdir.join(LOG_FILE), &fit.log.format())?;
        write_file(&vdir.join(CONFIG_FILE), &v.config.to_text())?;
        let _ = writeln!(table, "{name}\t{}", eval.model.row());
        rows.push((name, eval.model));
    }
    write_file(&out.join(ABLATION_FILE), &table)?;
    Ok(rows)
}

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub loss: String,
    pub seed: u64,
    /// Loss value at the checked point.
    pub value: f64,
    pub report: GradCheckReport,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.report.passes(GRADCHECK_TOLERANCE)
    }

    /// True when the worst mismatch is no larger than the finite-difference
    /// round-off of this loss, i.e. the numeric side cannot resolve it.
    pub fn worst_is_roundoff(&self) -> bool {
        let r = &self.report;
        (r.worst_analytic - r.worst_numeric).abs() <= roundoff_floor(self.value, DEFAULT_EPS)
    }
}

/// Small corpus and model used by the gradient checks.
struct CheckBed {
    corpus: Corpus,
    params: ParameterSet,
    target_batch: Vec<TrainingExample>,
    source_batch: Vec<TrainingExample>,
    pair_histories: Vec<(Vec<usize>, Vec<usize>)>,
}

/// Embedding scale of the checks; larger than the training init so no
/// gradient entry drowns in finite-difference round-off.
const CHECK_EMBEDDING_SCALE: f64 = 40.0;

/// Minimum distance of every ReLU pre-activation from its kink, ten
/// finite-difference steps. Closer instances are redrawn.
pub const CHECK_RELU_MARGIN: f64 = 10.0 * DEFAULT_EPS;

const CHECK_ATTEMPTS: u64 = 100;

fn check_bed(dim: usize, history_len: usize, seed: u64) -> Result<CheckBed> {
    let synth = synthetic::generate(&SynthConfig {
        users: 6,
        latent_dim: 3,
        source_vocab: 24,
        target_vocab: 24,
        overlap: 0.25,
        topics: 3,
        articles_per_domain: 12,
        words_per_article: 5,
        events_per_user: 5,
        seed,
        ..SynthConfig::default()
    })?;
    let corpus = Corpus::build(&synth.news, &synth.events, &CorpusOptions::default())?;
    let mut r = rng::stream(seed, "grad-check");
    let mut batch = |domain: Domain, user: usize| -> Result<Vec<TrainingExample>> {
        let h = corpus
            .history(user, domain)
            .ok_or_else(|| Error::Precondition("check corpus user without history".into()))?;
        // One full-history positive and one negative: a small loss keeps
        // finite-difference round-off well below the smallest gradients.
        let positive = corpus::generate_positive_examples(h, history_len)
            .pop()
            .ok_or_else(|| Error::Precondition("check corpus user with a single read".into()))?;
        with_negatives(
            &[positive],
            corpus.domain_articles(domain),
            1,
            |_| h.articles().collect::<HashSet<_>>(),
            &mut r,
        )
    };
    let target_batch = batch(Domain::Target, 0)?;
    let source_batch = batch(Domain::Source, 1)?;
    let latest = |u: usize, d: Domain| -> Vec<usize> {
        let reads: Vec<usize> = corpus.history(u, d).map(|h| h.articles().collect()).unwrap_or_default();
        reads[reads.len().saturating_sub(history_len)..].to_vec()
    };
    let pair_histories = (0..3).map(|u| (latest(u, Domain::Source), latest(u, Domain::Target))).collect();

    let cf_hidden = crate::model::ModelConfig::default().cf_hidden;
    for attempt in 0..CHECK_ATTEMPTS {
        let mut ir = rng::indexed_stream(seed, "grad-check/init", attempt);
        let mut params = ParameterSet::new();
        crate::base_network::init_embedding(&mut params, corpus.vocab().len(), dim, &mut ir)?;
        for d in Domain::BOTH {
            crate::base_network::init_network(&mut params, d, dim, &cf_hidden, &mut ir)?;
        }
        for (name, t) in params.iter_mut() {
            if name == EMBEDDING {
                t.values_mut().iter_mut().for_each(|v| *v *= CHECK_EMBEDDING_SCALE);
            } else if name.ends_with(".b") {
                let noise = crate::numeric::uniform(t.dims(), 0.1, &mut ir);
                t.add_scaled(&noise, 1.0)?;
            }
        }
        let mut margin = f64::INFINITY;
        for (d, b) in [(Domain::Target, &target_batch), (Domain::Source, &source_batch)] {
            margin = margin.min(crate::base_network::BaseNetwork::new(&params, d)?.relu_margin(corpus.articles(), b)?);
        }
        if margin > CHECK_RELU_MARGIN {
            return Ok(CheckBed {
                corpus,
                params,
                target_batch,
                source_batch,
                pair_histories,
            });
        }
    }
    Err(Error::Precondition(format!(
        "no check instance clear of ReLU kinks in {CHECK_ATTEMPTS} draws"
    )))
}

fn random_pairs(dim: usize, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut r = rng::stream(seed, "grad-check/pairs");
    let mut v = || crate::numeric::uniform(&[dim], 1.0, &mut r).into_values();
    (0..n).map(|_| (v(), v())).collect()
}

/// Central-difference checks of the joint cross-entropy, of every
/// parametric translator loss and of the end-to-end objective.
pub fn grad_check(dim: usize, history_len: usize, seed: u64) -> Result<Vec<GradCheckEntry>> {
    let bed = check_bed(dim, history_len, seed)?;
    let articles = bed.corpus.articles();
    let mut entries = Vec::new();
    let mut push = |loss: String, value: f64, analytic: &Gradients, numeric: &Gradients| {
        entries.push(GradCheckEntry {
            loss,
            seed,
            value,
            report: compare(analytic, numeric),
        });
    };

    let (value, analytic) = joint_loss_grad(&bed.params, articles, &bed.target_batch, &bed.source_batch)?;
    let numeric = finite_difference_gradient(
        |p| joint_loss(p, articles, &bed.target_batch, &bed.source_batch),
        &bed.params,
        DEFAULT_EPS,
        |_| true,
    )?;
    push("joint".into(), value, &analytic, &numeric);

    let pairs = random_pairs(dim, 5, seed);
    for strategy in TransferStrategy::ALL.into_iter().filter(|s| *s != TransferStrategy::Identity) {
        let spec = TranslatorSpec::new(strategy, dim);
        let mut params = ParameterSet::new();
        init_translator(&mut params, &spec, &mut rng::stream(seed, "grad-check/translator"))?;
        if strategy != TransferStrategy::Autoencoder {
            // Move the projection off its identity start so every term is active.
            perturb(&mut params, seed)?;
        }
        let mut analytic = Gradients::new();
        let (value, _) = Translator::new(&params, &spec)?.loss_grad(&pairs, 1.0, Some(&mut analytic))?;
        let numeric = finite_difference_gradient(
            |p| Translator::new(p, &spec)?.loss(&pairs),
            &params,
            DEFAULT_EPS,
            |_| true,
        )?;
        push(format!("translator/{}", strategy.key()), value, &analytic, &numeric);
    }

    let spec = TranslatorSpec::new(TransferStrategy::Autoencoder, dim);
    let mut params = bed.params.clone();
    init_translator(&mut params, &spec, &mut rng::stream(seed, "grad-check/translator"))?;
    let e2e = |p: &ParameterSet, g: Option<&mut Gradients>| -> Result<f64> {
        match g {
            Some(g) => {
                let (l, jg) = joint_loss_grad(p, articles, &bed.target_batch, &bed.source_batch)?;
                g.accumulate(&jg)?;
                Ok(l + pair_loss(p, &spec, articles, &bed.pair_histories, 1.0, Some(g))?)
            }
            None => Ok(joint_loss(p, articles, &bed.target_batch, &bed.source_batch)?
                + pair_loss(p, &spec, articles, &bed.pair_histories, 1.0, None)?),
        }
    };
    let mut analytic = Gradients::new();
    let value = e2e(&params, Some(&mut analytic))?;
    let numeric = finite_difference_gradient(
        |p| e2e(p, None),
        &params,
        DEFAULT_EPS,
        |n| n == EMBEDDING || is_translator_param(n),
    )?;
    push("end_to_end".into(), value, &analytic, &numeric);
    Ok(entries)
}

fn perturb(params: &mut ParameterSet, seed: u64) -> Result<()> {
    let mut r = rng::stream(seed, "grad-check/perturb");
    for (_, t) in params.iter_mut() {
        let noise: Tensor = crate::numeric::uniform(t.dims(), 0.3, &mut r);
        t.add_scaled(&noise, 1.0)?;
    }
    Ok(())
}

pub fn format_grad_check(entries: &[GradCheckEntry]) -> String {
    let mut s = String::from("loss\tseed\tmax_rel_error\tworst\tanalytic\tnumeric\tstatus\n");
    for e in entries {
        let status = match (e.passed(), e.worst_is_roundoff()) {
            (true, _) => "PASS",
            (false, true) => "FAIL(round-off)",
            (false, false) => "FAIL",
        };
        let _ = writeln!(
            s,
            "{}\t{}\t{:.3e}\t{}[{}]\t{:.6e}\t{:.6e}\t{status}",
            e.loss,
            e.seed,
            e.report.max_relative_error,
            e.report.worst_parameter,
            e.report.worst_index,
            e.report.worst_analytic,
            e.report.worst_numeric,
        );
    }
    s
}

/// Checks at D = 8, L = 3 for the run seed.
pub fn run_grad_check(cfg: &RunConfig, out: &Path) -> Result<Vec<GradCheckEntry>> {
    let entries = grad_check(8, 3, seed_of(cfg))?;
    write_file(&out.join(GRADCHECK_FILE), &format_grad_check(&entries))?;
    Ok(entries)
}

/// Attention table for sampled test users: the target network's weights
/// over each user's reads before their last one, which is the candidate.
pub fn run_case_study(cfg: &RunConfig, out: &Path) -> Result<String> {
    let model = Model::load(cfg.model.clone(), &out.join(CHECKPOINT_FILE))?;
    let prepared = load_prepared(cfg, &corpus_dir(cfg, out))?;
    let corpus = &prepared.corpus;
    let mut users: Vec<usize> = prepared
        .split
        .test
        .iter()
        .copied()
        .filter(|&u| corpus.history(u, Domain::Target).is_some_and(|h| h.len() >= 2))
        .collect();
    users.shuffle(&mut rng::stream(seed_of(cfg), "case-study"));
    users.truncate(cfg.case_study_users);
    users.sort_unstable();
    let mut table = String::from("user\tposition\tnews_id\tweight\ttext\n");
    for u in users {
        let reads: Vec<usize> = corpus.history(u, Domain::Target).expect("filtered").articles().collect();
        let (candidate, before) = reads.split_last().expect("two reads");
        let history = &before[before.len().saturating_sub(cfg.model.history_len)..];
        let rows = evaluation::attention_report(&model, corpus, Domain::Target, history, *candidate)?;
        table.push_str(&evaluation::format_attention(corpus.user_name(u), &rows));
    }
    write_file(&out.join(CASE_STUDY_FILE), &table)?;
    Ok(table)
}
