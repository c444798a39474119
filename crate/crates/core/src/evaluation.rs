//! Sampled-negative ranking evaluation: each positive is ranked against
//! sampled unread articles and scored with HR@K, NDCG@K, MRR and AUC.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Corpus, Domain, UserSplit};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng;

pub const DEFAULT_NEGATIVES: usize = 99;
pub const CUTOFFS: [usize; 2] = [5, 10];

/// One positive and its sampled negatives. `history` is the context a warm
/// model may use (empty for cold-start cases).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub user: usize,
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

impl EvalCase {
    /// Positive first, then the negatives.
    pub fn candidates(&self) -> Vec<usize> {
        std::iter::once(self.positive).chain(self.negatives.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseMetrics {
    pub rank: usize,
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub mrr: f64,
    pub auc: f64,
}

pub fn hit_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// 1-based rank of `ids[0]` after sorting by descending score, ties going
/// to the lower id.
pub fn positive_rank(ids: &[usize], scores: &[f64]) -> usize {
    let (p, s) = (ids[0], scores[0]);
    1 + ids[1..]
        .iter()
        .zip(&scores[1..])
        .filter(|(&id, &sc)| sc > s || (sc == s && id < p))
        .count()
}

/// Metrics of one case; `ids[0]` / `scores[0]` belong to the positive.
pub fn rank_metrics(ids: &[usize], scores: &[f64]) -> Result<CaseMetrics> {
    if ids.len() != scores.len() || ids.len() < 2 {
        return Err(Error::ShapeMismatch {
            op: "rank_metrics",
            left: vec![ids.len()],
            right: vec![scores.len()],
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            name: "score".into(),
            index: 0,
            value: *bad,
        });
    }
    let rank = positive_rank(ids, scores);
    let s = scores[0];
    let (mut below, mut ties) = (0usize, 0usize);
    for &n in &scores[1..] {
        if n < s {
            below += 1;
        } else if n == s {
            ties += 1;
        }
    }
    Ok(CaseMetrics {
        rank,
        hr5: hit_at(rank, 5),
        hr10: hit_at(rank, 10),
        ndcg5: ndcg_at(rank, 5),
        ndcg10: ndcg_at(rank, 10),
        mrr: 1.0 / rank as f64,
        auc: (below as f64 + 0.5 * ties as f64) / (scores.len() - 1) as f64,
    })
}

/// Case means, in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub hr5: f64,
    pub hr10: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub mrr: f64,
    pub auc: f64,
    pub cases: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["HR@5", "HR@10", "NDCG@5", "NDCG@10", "MRR", "AUC"];

    pub fn from_cases(cases: &[CaseMetrics]) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Empty("no evaluation cases".into()));
        }
        let n = cases.len() as f64;
        let mean = |f: fn(&CaseMetrics) -> f64| 100.0 * cases.iter().map(f).sum::<f64>() / n;
        Ok(MetricsReport {
            hr5: mean(|c| c.hr5),
            hr10: mean(|c| c.hr10),
            ndcg5: mean(|c| c.ndcg5),
            ndcg10: mean(|c| c.ndcg10),
            mrr: mean(|c| c.mrr),
            auc: mean(|c| c.auc),
            cases: cases.len(),
        })
    }

    pub fn values(&self) -> [f64; 6] {
        [self.hr5, self.hr10, self.ndcg5, self.ndcg10, self.mrr, self.auc]
    }

    pub fn header() -> String {
        Self::COLUMNS.join("\t")
    }

    /// Tab-separated values with two decimals, in [`Self::COLUMNS`] order.
    pub fn row(&self) -> String {
        self.values().iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join("\t")
    }

    /// `key=value` block.
    pub fn key_values(&self) -> String {
        let keys = ["hr5", "hr10", "ndcg5", "ndcg10", "mrr", "auc"];
        let mut s = String::new();
        for (k, v) in keys.iter().zip(self.values()) {
            let _ = writeln!(s, "{k}={v:.2}");
        }
        let _ = writeln!(s, "cases={}", self.cases);
        s
    }
}

fn sample_without_replacement<R: Rng + ?Sized>(
    pool: &[usize],
    exclude: &HashSet<usize>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let available = pool.iter().filter(|a| !exclude.contains(a)).count();
    if available < n {
        return Err(Error::TooFewNegatives { needed: n, available });
    }
    if available <= 2 * n {
        let mut admissible: Vec<usize> = pool.iter().copied().filter(|a| !exclude.contains(a)).collect();
        let (chosen, _) = admissible.partial_shuffle(rng, n);
        return Ok(chosen.to_vec());
    }
    let mut chosen = Vec::with_capacity(n);
    let mut taken = HashSet::with_capacity(n);
    while chosen.len() < n {
        let a = pool[rng.random_range(0..pool.len())];
        if !exclude.contains(&a) && taken.insert(a) {
            chosen.push(a);
        }
    }
    Ok(chosen)
}

/// One case per position (with at least one predecessor) of each user's
/// history in `domain`. Negatives come from the `stream` sub-stream keyed by
/// user, so a user's cases do not depend on who else is evaluated.
pub fn build_eval_cases(
    users: &[usize],
    corpus: &Corpus,
    domain: Domain,
    history_len: usize,
    negatives: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<EvalCase>> {
    let pool = corpus.domain_articles(domain);
    let mut cases = Vec::new();
    for &u in users {
        let Some(h) = corpus.history(u, domain) else {
            continue;
        };
        let reads: Vec<usize> = h.articles().collect();
        let exclude: HashSet<usize> = reads.iter().copied().collect();
        let mut r = rng::indexed_stream(seed, stream, u as u64);
        for c in 1..reads.len() {
            cases.push(EvalCase {
                user: u,
                history: reads[c.saturating_sub(history_len)..c].to_vec(),
                positive: reads[c],
                negatives: sample_without_replacement(pool, &exclude, negatives, &mut r)?,
            });
        }
    }
    Ok(cases)
}

/// Validation cases: each train user's held-out last read in `domain`.
pub fn build_validation_cases(
    split: &UserSplit,
    corpus: &Corpus,
    domain: Domain,
    history_len: usize,
    negatives: usize,
    seed: u64,
) -> Result<Vec<EvalCase>> {
    let pool = corpus.domain_articles(domain);
    let mut cases = Vec::new();
    for (&u, &pos) in &split.validation {
        let h = corpus.history(u, domain).ok_or_else(|| Error::Precondition(format!("validation user {u} has no history")))?;
        let reads: Vec<usize> = h.articles().collect();
        let exclude: HashSet<usize> = reads.iter().copied().collect();
        let mut r = rng::indexed_stream(seed, "validation-negatives", u as u64);
        cases.push(EvalCase {
            user: u,
            history: reads[pos.saturating_sub(history_len)..pos].to_vec(),
            positive: reads[pos],
            negatives: sample_without_replacement(pool, &exclude, negatives, &mut r)?,
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCase {
    pub user: usize,
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
    pub metrics: CaseMetrics,
}

/// Scores every case with `score(case, candidates)` and aggregates.
pub fn evaluate<F>(cases: &[EvalCase], mut score: F) -> Result<(MetricsReport, Vec<ScoredCase>)>
where
    F: FnMut(&EvalCase, &[usize]) -> Result<Vec<f64>>,
{
    let mut scored = Vec::with_capacity(cases.len());
    for c in cases {
        let ids = c.candidates();
        let scores = score(c, &ids)?;
        let metrics = rank_metrics(&ids, &scores)?;
        scored.push(ScoredCase {
            user: c.user,
            ids,
            scores,
            metrics,
        });
    }
    let per_case: Vec<CaseMetrics> = scored.iter().map(|s| s.metrics).collect();
    Ok((MetricsReport::from_cases(&per_case)?, scored))
}

/// One row of the attention case study. The candidate has no weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    /// Position in the history, oldest first; the candidate comes last.
    pub position: usize,
    pub news_id: String,
    pub text: String,
    pub weight: Option<f64>,
}

/// Attention weights the `domain` network puts on each history article for
/// `candidate`, heaviest first, followed by the candidate row.
pub fn attention_report(
    model: &Model,
    corpus: &Corpus,
    domain: Domain,
    history: &[usize],
    candidate: usize,
) -> Result<Vec<AttentionRow>> {
    if history.is_empty() {
        return Err(Error::Empty("attention report needs a history".into()));
    }
    let net = model.network(domain)?;
    let reprs = history
        .iter()
        .map(|&a| net.news_encode(&corpus.article(a).tokens))
        .collect::<Result<Vec<_>>>()?;
    let cand = net.news_encode(&corpus.article(candidate).tokens)?;
    let weights = net.attention_weights(&reprs, &cand)?;
    let row = |position: usize, a: usize, weight| AttentionRow {
        position,
        news_id: corpus.article(a).id.clone(),
        text: corpus.article(a).text.clone(),
        weight,
    };
    let mut rows: Vec<AttentionRow> = history
        .iter()
        .zip(&weights)
        .enumerate()
        .map(|(i, (&a, &w))| row(i, a, Some(w)))
        .collect();
    rows.sort_by(|a, b| {
        b.weight
            .unwrap_or(0.0)
            .total_cmp(&a.weight.unwrap_or(0.0))
            .then(a.position.cmp(&b.position))
    });
    rows.push(row(history.len(), candidate, None));
    Ok(rows)
}

/// `user<TAB>no<TAB>news_id<TAB>weight<TAB>text`, weight `N/A` for the candidate.
pub fn format_attention(user: &str, rows: &[AttentionRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let w = r.weight.map_or("N/A".to_string(), |w| format!("{w:.2}"));
        let _ = writeln!(s, "{user}\t{}\t{}\t{w}\t{}", r.position, r.news_id, r.text);
    }
    s
}
