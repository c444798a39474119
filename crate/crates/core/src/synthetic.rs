//! Two-domain corpora with known latent user interests.
//!
//! Each user has `z ~ N(0, I_k)`. Source interest is `z`, target interest is
//! `map(z)`. Every article belongs to one topic with a unit direction in
//! latent space; a user reads articles without replacement with probability
//! proportional to `exp(beta * interest . topic)`. Article text is a bag of
//! words from the topic's word distribution.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::io::write_corpus_dir;
use crate::corpus::{Domain, EventRecord, NewsRecord};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterestMap {
    Identity,
    /// `M z` with a random Gaussian `M`.
    Linear,
    /// `tanh(A z + b)` with random `A`, `b`.
    Nonlinear,
}

impl InterestMap {
    pub fn key(self) -> &'static str {
        match self {
            InterestMap::Identity => "identity",
            InterestMap::Linear => "linear",
            InterestMap::Nonlinear => "nonlinear",
        }
    }
}

impl fmt::Display for InterestMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for InterestMap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(InterestMap::Identity),
            "linear" => Ok(InterestMap::Linear),
            "nonlinear" => Ok(InterestMap::Nonlinear),
            _ => Err(format!("unknown interest map `{s}` (identity|linear|nonlinear)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub latent_dim: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    /// Fraction of the smaller vocabulary that both domains share.
    pub overlap: f64,
    pub topics: usize,
    pub articles_per_domain: usize,
    pub words_per_article: usize,
    /// Probability that a word is drawn from its topic's own words rather
    /// than uniformly from the domain vocabulary.
    pub topic_mass: f64,
    /// Sharpness of reading choices.
    pub beta: f64,
    pub map: InterestMap,
    pub events_per_user: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 500,
            latent_dim: 8,
            source_vocab: 400,
            target_vocab: 400,
            overlap: 0.2,
            topics: 64,
            articles_per_domain: 240,
            words_per_article: 12,
            topic_mass: 0.8,
            beta: 3.0,
            map: InterestMap::Nonlinear,
            events_per_user: 30,
            seed: rng::DEFAULT_SEED,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |key: &str, ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check("synth.users", self.users >= 1, "must be at least 1")?;
        check("synth.latent_dim", self.latent_dim >= 1, "must be at least 1")?;
        check("synth.overlap", (0.0..=1.0).contains(&self.overlap), "must be in [0, 1]")?;
        check("synth.topic_mass", (0.0..=1.0).contains(&self.topic_mass), "must be in [0, 1]")?;
        check("synth.topics", self.topics >= 1, "must be at least 1")?;
        check("synth.words_per_article", self.words_per_article >= 1, "must be at least 1")?;
        check("synth.beta", self.beta.is_finite(), "must be finite")?;
        for (key, v) in [("synth.source_vocab", self.source_vocab), ("synth.target_vocab", self.target_vocab)] {
            check(key, v >= self.topics, "must be at least synth.topics")?;
        }
        check(
            "synth.events_per_user",
            self.events_per_user >= 1 && self.events_per_user <= self.articles_per_domain,
            "must be in [1, synth.articles_per_domain]",
        )?;
        Ok(())
    }

    pub fn shared_words(&self) -> usize {
        (self.overlap * self.source_vocab.min(self.target_vocab) as f64).round() as usize
    }
}

/// Word list of one domain: shared words `w*` first, then domain-only words.
pub fn domain_words(config: &SynthConfig, domain: Domain) -> Vec<String> {
    let shared = config.shared_words();
    let (size, prefix) = match domain {
        Domain::Source => (config.source_vocab, "s"),
        Domain::Target => (config.target_vocab, "t"),
    };
    (0..shared)
        .map(|i| format!("w{i}"))
        .chain((0..size - shared).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Probability of each domain word under `topic`. Topic `t` owns the words
/// whose index is congruent to `t` modulo the topic count.
pub fn topic_word_distribution(config: &SynthConfig, domain: Domain, topic: usize) -> Vec<f64> {
    let v = domain_words(config, domain).len();
    let own = (0..v).filter(|i| i % config.topics == topic).count();
    (0..v)
        .map(|i| {
            let base = (1.0 - config.topic_mass) / v as f64;
            if i % config.topics == topic {
                base + config.topic_mass / own as f64
            } else {
                base
            }
        })
        .collect()
}

/// Generated corpus plus the latent ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub news: Vec<NewsRecord>,
    pub events: Vec<EventRecord>,
    /// `z` per user, in user order.
    pub latent: Vec<Vec<f64>>,
    /// `map(z)` per user.
    pub target_interest: Vec<Vec<f64>>,
    /// Unit topic directions per domain.
    pub topic_vectors: BTreeMap<Domain, Vec<Vec<f64>>>,
    /// Topic of each article id.
    pub article_topic: BTreeMap<String, usize>,
}

impl SynthCorpus {
    pub fn user_id(index: usize) -> String {
        format!("u{index:04}")
    }

    pub fn article_id(domain: Domain, index: usize) -> String {
        format!("{}{index:04}", domain.code())
    }

    /// `interest . topic` of a user for an article.
    pub fn affinity(&self, user: usize, article: &str) -> Option<f64> {
        let domain: Domain = article[..1].parse().ok()?;
        let topic = *self.article_topic.get(article)?;
        let interest = match domain {
            Domain::Source => &self.latent[user],
            Domain::Target => &self.target_interest[user],
        };
        Some(dot(interest, &self.topic_vectors[&domain][topic]))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_corpus_dir(dir, &self.news, &self.events)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian(n: usize, scale: f64, r: &mut StreamRng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(r);
            scale * x
        })
        .collect()
}

fn unit(n: usize, r: &mut StreamRng) -> Vec<f64> {
    loop {
        let v = gaussian(n, 1.0, r);
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_categorical(weights: &[f64], r: &mut StreamRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Applies the configured cross-domain map to every latent vector.
fn map_interests(config: &SynthConfig, latent: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = config.latent_dim;
    let mut r = rng::stream(config.seed, "synth/map");
    match config.map {
        InterestMap::Identity => latent.to_vec(),
        InterestMap::Linear => {
            let m: Vec<Vec<f64>> = (0..k).map(|_| gaussian(k, 1.0 / (k as f64).sqrt(), &mut r)).collect();
            latent.iter().map(|z| m.iter().map(|row| dot(row, z)).collect()).collect()
        }
        InterestMap::Nonlinear => {
            // Gain 2 puts A z well into tanh's saturating range. The offset is
            // kept small: under saturation it acts as a population-wide
            // preference, which a zero user vector can already exploit.
            let a: Vec<Vec<f64>> = (0..k).map(|_| gaussian(k, 2.0 / (k as f64).sqrt(), &mut r)).collect();
            let b = gaussian(k, 0.2, &mut r);
            latent
                .iter()
                .map(|z| a.iter().zip(&b).map(|(row, bi)| (dot(row, z) + bi).tanh() * (k as f64).sqrt() / 2.0).collect())
                .collect()
        }
    }
}

/// `n` draws without replacement, probability proportional to
/// `exp(scores)`, returned in draw order (exponential-key method).
fn weighted_order(scores: &[f64], n: usize, r: &mut StreamRng) -> Vec<usize> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut keyed: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let u: f64 = r.random_range(f64::MIN_POSITIVE..1.0);
            (-u.ln() / (s - max).exp(), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(n).map(|(_, i)| i).collect()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let k = config.latent_dim;
    let mut zr = rng::stream(config.seed, "synth/latent");
    let latent: Vec<Vec<f64>> = (0..config.users).map(|_| gaussian(k, 1.0, &mut zr)).collect();
    let target_interest = map_interests(config, &latent);

    let mut news = Vec::new();
    let mut topic_vectors = BTreeMap::new();
    let mut article_topic = BTreeMap::new();
    let mut domain_topics: BTreeMap<Domain, Vec<usize>> = BTreeMap::new();
    for domain in Domain::BOTH {
        let mut tr = rng::stream(config.seed, &format!("synth/topics/{domain}"));
        let vectors: Vec<Vec<f64>> = (0..config.topics).map(|_| unit(k, &mut tr)).collect();
        let words = domain_words(config, domain);
        let dists: Vec<Vec<f64>> = (0..config.topics).map(|t| topic_word_distribution(config, domain, t)).collect();
        let mut ar = rng::stream(config.seed, &format!("synth/articles/{domain}"));
        let mut topics = Vec::with_capacity(config.articles_per_domain);
        for a in 0..config.articles_per_domain {
            // Round-robin topics keep every topic populated.
            let topic = a % config.topics;
            let text: Vec<&str> = (0..config.words_per_article)
                .map(|_| words[sample_categorical(&dists[topic], &mut ar)].as_str())
                .collect();
            let id = SynthCorpus::article_id(domain, a);
            article_topic.insert(id.clone(), topic);
            news.push(NewsRecord {
                id,
                domain,
                text: text.join(" "),
            });
            topics.push(topic);
        }
        topic_vectors.insert(domain, vectors);
        domain_topics.insert(domain, topics);
    }

    let mut events = Vec::with_capacity(2 * config.users * config.events_per_user);
    for u in 0..config.users {
        let user = SynthCorpus::user_id(u);
        for domain in Domain::BOTH {
            let interest = match domain {
                Domain::Source => &latent[u],
                Domain::Target => &target_interest[u],
            };
            let scores: Vec<f64> = domain_topics[&domain]
                .iter()
                .map(|&t| config.beta * dot(interest, &topic_vectors[&domain][t]))
                .collect();
            let mut rr = rng::indexed_stream(config.seed, &format!("synth/reads/{domain}"), u as u64);
            for (i, a) in weighted_order(&scores, config.events_per_user, &mut rr).into_iter().enumerate() {
                let offset = if domain == Domain::Source { 0 } else { 1 };
                events.push(EventRecord {
                    user: user.clone(),
                    news: SynthCorpus::article_id(domain, a),
                    domain,
                    timestamp: 2 * i as i64 + offset,
                });
            }
        }
    }
    Ok(SynthCorpus {
        config: config.clone(),
        news,
        events,
        latent,
        target_interest,
        topic_vectors,
        article_topic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::io::{format_events, format_news};
    use crate::corpus::{Corpus, CorpusOptions};
    use std::collections::HashSet;

    fn small() -> SynthConfig {
        SynthConfig {
            users: 60,
            articles_per_domain: 80,
            events_per_user: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_overlap_gives_disjoint_vocabularies() {
        let c = SynthConfig {
            overlap: 0.0,
            source_vocab: 50,
            target_vocab: 70,
            ..small()
        };
        let s: HashSet<_> = domain_words(&c, Domain::Source).into_iter().collect();
        let t: HashSet<_> = domain_words(&c, Domain::Target).into_iter().collect();
        assert!(s.is_disjoint(&t));
        assert_eq!(s.union(&t).count(), 120);
        let full = SynthConfig { overlap: 1.0, ..c };
        assert_eq!(full.shared_words(), 50);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(format_news(&a.news), format_news(&b.news));
        assert_eq!(format_events(&a.events), format_events(&b.events));
        let c = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(format_events(&a.events), format_events(&c.events));
    }

    #[test]
    fn every_user_reads_in_both_domains() {
        let s = generate(&small()).unwrap();
        let corpus = Corpus::build(&s.news, &s.events, &CorpusOptions::default()).unwrap();
        assert_eq!(corpus.shared_users().len(), 60);
        for h in corpus.histories(Domain::Target) {
            assert_eq!(h.len(), 10);
        }
    }

    #[test]
    fn topic_distributions_are_normalized() {
        let c = small();
        for d in Domain::BOTH {
            for t in 0..c.topics {
                let p = topic_word_distribution(&c, d, t);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn word_frequencies_match_topic_mixture() {
        // Pool words over every article of topic 0 in the target domain and
        // compare counts with the configured distribution.
        let c = SynthConfig {
            articles_per_domain: 1600,
            words_per_article: 20,
            users: 2,
            events_per_user: 1,
            ..SynthConfig::default()
        };
        let s = generate(&c).unwrap();
        let words = domain_words(&c, Domain::Target);
        let index: BTreeMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
        let mut counts = vec![0usize; words.len()];
        for n in s.news.iter().filter(|n| n.domain == Domain::Target && s.article_topic[&n.id] == 0) {
            for w in n.text.split(' ') {
                counts[index[w]] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        let p = topic_word_distribution(&c, Domain::Target, 0);
        // Pool the uniform background into one cell so expected counts stay large.
        let (mut chi2, mut rest_obs, mut rest_exp, mut cells) = (0.0, 0.0, 0.0, 0usize);
        for (i, &o) in counts.iter().enumerate() {
            let e = p[i] * total as f64;
            if i % c.topics == 0 {
                chi2 += (o as f64 - e).powi(2) / e;
                cells += 1;
            } else {
                rest_obs += o as f64;
                rest_exp += e;
            }
        }
        chi2 += (rest_obs - rest_exp).powi(2) / rest_exp;
        cells += 1;
        let df = (cells - 1) as f64;
        // Wilson-Hilferty upper 0.1% point.
        let z = 3.09;
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit} (df {df})");
    }

    #[test]
    fn reads_follow_affinity() {
        let s = generate(&small()).unwrap();
        // Mean affinity of read articles must exceed the domain average.
        let mut read = 0.0;
        let mut all = 0.0;
        for e in s.events.iter().filter(|e| e.domain == Domain::Target) {
            let u: usize = e.user[1..].parse().unwrap();
            read += s.affinity(u, &e.news).unwrap();
        }
        read /= s.events.len() as f64 / 2.0;
        for u in 0..60 {
            for a in 0..80 {
                all += s.affinity(u, &SynthCorpus::article_id(Domain::Target, a)).unwrap();
            }
        }
        all /= 60.0 * 80.0;
        assert!(read > all + 0.3, "read {read} vs all {all}");
    }

    /// Fits `sigmoid(w x + c)` by Newton's method, returns mean log loss.
    fn logistic_log_loss(xs: &[f64], ys: &[f64]) -> f64 {
        let (mut w, mut c) = (0.0, 0.0);
        for _ in 0..50 {
            let (mut gw, mut gc, mut hww, mut hwc, mut hcc) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&x, &y) in xs.iter().zip(ys) {
                let p = 1.0 / (1.0 + (-(w * x + c)).exp());
                let s = p * (1.0 - p);
                gw += (p - y) * x;
                gc += p - y;
                hww += s * x * x;
                hwc += s * x;
                hcc += s;
            }
            let det = hww * hcc - hwc * hwc;
            w -= (hcc * gw - hwc * gc) / det;
            c -= (hww * gc - hwc * gw) / det;
        }
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| {
                let p = (1.0 / (1.0 + (-(w * x + c)).exp())).clamp(1e-12, 1.0 - 1e-12);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / xs.len() as f64
    }

    #[test]
    fn nonlinear_map_needs_adaptation() {
        let s = generate(&small()).unwrap();
        let reads: HashSet<(String, String)> = s
            .events
            .iter()
            .filter(|e| e.domain == Domain::Target)
            .map(|e| (e.user.clone(), e.news.clone()))
            .collect();
        let topics = &s.topic_vectors[&Domain::Target];
        let (mut raw, mut mapped, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for u in 0..60 {
            for a in 0..80 {
                let id = SynthCorpus::article_id(Domain::Target, a);
                let t = &topics[s.article_topic[&id]];
                raw.push(dot(&s.latent[u], t));
                mapped.push(dot(&s.target_interest[u], t));
                ys.push(f64::from(u8::from(reads.contains(&(SynthCorpus::user_id(u), id)))));
            }
        }
        let raw_loss = logistic_log_loss(&raw, &ys);
        let mapped_loss = logistic_log_loss(&mapped, &ys);
        assert!(mapped_loss < raw_loss - 0.01, "raw {raw_loss} mapped {mapped_loss}");
    }

    #[test]
    fn invalid_configs_name_the_key() {
        for (c, key) in [
            (SynthConfig { overlap: 1.5, ..small() }, "synth.overlap"),
            (SynthConfig { latent_dim: 0, ..small() }, "synth.latent_dim"),
            (SynthConfig { events_per_user: 81, ..small() }, "synth.events_per_user"),
        ] {
            match generate(&c).unwrap_err() {
                Error::Config { key: k, .. } => assert_eq!(k, key),
                e => panic!("{e:?}"),
            }
        }
    }
}
