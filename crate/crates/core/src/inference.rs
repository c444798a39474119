//! Serving users that have no target-domain training history: their target
//! representation is the translated source representation.

use std::fmt::Write as _;

use crate::base_network::BaseNetwork;
use crate::corpus::{Corpus, Domain, UserSplit};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColdStartQuery {
    pub user: String,
    pub candidates: Vec<String>,
    /// Only source reads strictly before this timestamp are used.
    pub cutoff: Option<i64>,
}

/// Latest `history_len` source reads of `user` before `cutoff`.
pub fn source_history(corpus: &Corpus, user: usize, history_len: usize, cutoff: Option<i64>) -> Vec<usize> {
    let Some(h) = corpus.history(user, Domain::Source) else {
        return Vec::new();
    };
    let reads: Vec<usize> = h
        .events
        .iter()
        .filter(|e| cutoff.is_none_or(|c| e.timestamp < c))
        .map(|e| e.article)
        .collect();
    reads[reads.len().saturating_sub(history_len)..].to_vec()
}

/// `F(phi_S(u))` from the candidate-free source representation. Reads no
/// target-domain events.
pub fn infer_unseen_user(
    model: &Model,
    corpus: &Corpus,
    split: &UserSplit,
    user: usize,
    cutoff: Option<i64>,
) -> Result<Vec<f64>> {
    if split.is_train(user) && corpus.history(user, Domain::Target).is_some() {
        return Err(Error::Precondition(format!(
            "user `{}` is a target-domain training user",
            corpus.user_name(user)
        )));
    }
    translate_user(model, corpus, user, cutoff)
}

/// Translation step of [`infer_unseen_user`] without the training-set guard.
pub fn translate_user(model: &Model, corpus: &Corpus, user: usize, cutoff: Option<i64>) -> Result<Vec<f64>> {
    let hist = source_history(corpus, user, model.config.history_len, cutoff);
    if hist.is_empty() {
        return Err(Error::ColdEverywhere(corpus.user_name(user).to_string()));
    }
    let source = model.mean_representation(Domain::Source, corpus.articles(), &hist)?;
    model.translator()?.translate(&source)
}

/// Cached news representations of one domain, for repeated scoring.
pub struct NewsCache<'a> {
    net: BaseNetwork<'a>,
    reprs: Vec<Option<Vec<f64>>>,
}

impl<'a> NewsCache<'a> {
    pub fn new(model: &'a Model, corpus: &Corpus, domain: Domain) -> Result<Self> {
        let net = model.network(domain)?;
        let mut reprs = vec![None; corpus.articles().len()];
        for &a in corpus.domain_articles(domain) {
            reprs[a] = Some(net.news_encode(&corpus.article(a).tokens)?);
        }
        Ok(NewsCache { net, reprs })
    }

    pub fn network(&self) -> &BaseNetwork<'a> {
        &self.net
    }

    pub fn repr(&self, article: usize) -> Result<&[f64]> {
        self.reprs
            .get(article)
            .and_then(Option::as_deref)
            .ok_or_else(|| Error::Unknown {
                kind: "article in scoring domain",
                id: article.to_string(),
            })
    }

    /// `f([user, psi(c)])` for a fixed user representation.
    pub fn score_fixed(&self, user: &[f64], candidates: &[usize]) -> Result<Vec<f64>> {
        candidates.iter().map(|&c| self.net.predict(user, self.repr(c)?)).collect()
    }

    /// Candidate-conditioned scoring from a reading history.
    pub fn score_history(&self, history: &[usize], candidates: &[usize]) -> Result<Vec<f64>> {
        let hist = history.iter().map(|&a| self.repr(a).map(<[f64]>::to_vec)).collect::<Result<Vec<_>>>()?;
        candidates
            .iter()
            .map(|&c| {
                let cand = self.repr(c)?;
                let user = self.net.user_encode(&hist, cand)?;
                self.net.predict(&user, cand)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub article: usize,
    pub score: f64,
}

/// Descending by score, ties to the lower article index (= lower news id).
pub fn rank_candidates(mut scored: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.article.cmp(&b.article)));
    scored
}

/// Scores target candidates for a target user representation and ranks them.
pub fn score_candidates(
    model: &Model,
    corpus: &Corpus,
    target_repr: &[f64],
    candidates: &[usize],
) -> Result<Vec<ScoredCandidate>> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidates to score".into()));
    }
    let net = model.network(Domain::Target)?;
    let scored = candidates
        .iter()
        .map(|&c| {
            let art = corpus.articles().get(c).ok_or_else(|| Error::Unknown {
                kind: "news",
                id: c.to_string(),
            })?;
            if art.domain != Domain::Target {
                return Err(Error::Precondition(format!("candidate `{}` is not a target article", art.id)));
            }
            Ok(ScoredCandidate {
                article: c,
                score: net.predict(target_repr, &net.news_encode(&art.tokens)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_candidates(scored))
}

/// Full query path: resolve ids, translate, score, rank.
pub fn run_query(model: &Model, corpus: &Corpus, split: &UserSplit, query: &ColdStartQuery) -> Result<Vec<ScoredCandidate>> {
    let user = corpus.user_index(&query.user).ok_or_else(|| Error::Unknown {
        kind: "user",
        id: query.user.clone(),
    })?;
    let candidates = query
        .candidates
        .iter()
        .map(|id| corpus.require_article(id))
        .collect::<Result<Vec<_>>>()?;
    let repr = infer_unseen_user(model, corpus, split, user, query.cutoff)?;
    score_candidates(model, corpus, &repr, &candidates)
}

/// `user<TAB>candidate<TAB>score<TAB>rank` lines.
pub fn format_scores(corpus: &Corpus, user: &str, ranked: &[ScoredCandidate]) -> String {
    let mut s = String::new();
    for (i, c) in ranked.iter().enumerate() {
        let _ = writeln!(s, "{}\t{}\t{:.6}\t{}", user, corpus.article(c.article).id, c.score, i + 1);
    }
    s
}
