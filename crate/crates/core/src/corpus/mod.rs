//! News articles, reading logs, vocabularies and training examples.

mod examples;
pub mod io;
pub mod mind;
mod vocab;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};

pub(crate) use examples::positives_from;
pub use examples::{
    generate_positive_examples, sample_negative, split_users, with_negatives, TrainingExample,
    UserSplit,
};
pub use vocab::{build_vocabulary, tokenize, VocabEntry, Vocabulary, OOV_ID, PAD_ID, RESERVED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub const BOTH: [Domain; 2] = [Domain::Source, Domain::Target];

    pub fn code(self) -> &'static str {
        match self {
            Domain::Source => "S",
            Domain::Target => "T",
        }
    }

    /// Parameter-name prefix of this domain's network.
    pub fn prefix(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "S" | "s" | "source" => Ok(Domain::Source),
            "T" | "t" | "target" => Ok(Domain::Target),
            other => Err(format!("unknown domain `{other}`")),
        }
    }
}

/// One line of the news file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewsRecord {
    pub id: String,
    pub domain: Domain,
    pub text: String,
}

/// One line of the events file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub user: String,
    pub news: String,
    pub domain: Domain,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewsArticle {
    pub id: String,
    pub domain: Domain,
    pub text: String,
    /// Word ids, never empty.
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadEvent {
    /// Index into [`Corpus::articles`].
    pub article: usize,
    pub timestamp: i64,
}

/// A user's reads in one domain, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingHistory {
    pub user: usize,
    pub domain: Domain,
    pub events: Vec<ReadEvent>,
}

impl ReadingHistory {
    pub fn articles(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().map(|e| e.article)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub min_count: usize,
    pub shared_vocabulary: bool,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            min_count: 1,
            shared_vocabulary: true,
        }
    }
}

/// Tokenized two-domain corpus with per-user histories.
///
/// Articles are ordered by id, so comparing article indices is the same as
/// comparing news ids.
#[derive(Debug, Clone)]
pub struct Corpus {
    articles: Vec<NewsArticle>,
    article_index: HashMap<String, usize>,
    by_domain: [Vec<usize>; 2],
    users: Vec<String>,
    user_index: HashMap<String, usize>,
    histories: BTreeMap<(usize, Domain), ReadingHistory>,
    vocab: Vocabulary,
}

fn slot(domain: Domain) -> usize {
    match domain {
        Domain::Source => 0,
        Domain::Target => 1,
    }
}

impl Corpus {
    pub fn build(news: &[NewsRecord], events: &[EventRecord], opts: &CorpusOptions) -> Result<Self> {
        let mut tokenized: Vec<(&NewsRecord, Vec<String>)> = Vec::with_capacity(news.len());
        let mut seen = BTreeSet::new();
        for rec in news {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Precondition(format!("duplicate news id `{}`", rec.id)));
            }
            match tokenize(&rec.text) {
                Ok(t) => tokenized.push((rec, t)),
                Err(_) => warn!("rejecting article `{}`: no tokens after normalization", rec.id),
            }
        }
        tokenized.sort_by(|a, b| a.0.id.cmp(&b.0.id));

        let docs = |d: Domain| -> Vec<Vec<String>> {
            tokenized
                .iter()
                .filter(|(r, _)| r.domain == d)
                .map(|(_, t)| t.clone())
                .collect()
        };
        let vocab = build_vocabulary(
            &docs(Domain::Source),
            &docs(Domain::Target),
            opts.min_count,
            opts.shared_vocabulary,
        )?;

        let articles: Vec<NewsArticle> = tokenized
            .iter()
            .map(|(r, t)| NewsArticle {
                id: r.id.clone(),
                domain: r.domain,
                text: r.text.clone(),
                tokens: vocab.encode(t, r.domain),
            })
            .collect();
        let article_index: HashMap<String, usize> = articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), i))
            .collect();
        let mut by_domain = [Vec::new(), Vec::new()];
        for (i, a) in articles.iter().enumerate() {
            by_domain[slot(a.domain)].push(i);
        }

        let users: Vec<String> = events
            .iter()
            .map(|e| e.user.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let user_index: HashMap<String, usize> =
            users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();

        let rejected: BTreeSet<&str> = news
            .iter()
            .map(|r| r.id.as_str())
            .filter(|id| !article_index.contains_key(*id))
            .collect();
        let mut grouped: BTreeMap<(usize, Domain), Vec<ReadEvent>> = BTreeMap::new();
        for e in events {
            let Some(&article) = article_index.get(&e.news) else {
                if rejected.contains(e.news.as_str()) {
                    continue;
                }
                return Err(Error::Unknown {
                    kind: "news",
                    id: e.news.clone(),
                });
            };
            if articles[article].domain != e.domain {
                return Err(Error::Precondition(format!(
                    "event of `{}` puts news `{}` in domain {} but the article is in {}",
                    e.user, e.news, e.domain, articles[article].domain
                )));
            }
            grouped
                .entry((user_index[&e.user], e.domain))
                .or_default()
                .push(ReadEvent {
                    article,
                    timestamp: e.timestamp,
                });
        }
        let mut histories = BTreeMap::new();
        for ((user, domain), mut evs) in grouped {
            evs.sort_by_key(|e| (e.timestamp, e.article));
            evs.dedup();
            if let Some(w) = evs.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
                return Err(Error::Precondition(format!(
                    "user `{}` reads two articles at timestamp {} in domain {}",
                    users[user], w[0].timestamp, domain
                )));
            }
            histories.insert((user, domain), ReadingHistory { user, domain, events: evs });
        }

        Ok(Corpus {
            articles,
            article_index,
            by_domain,
            users,
            user_index,
            histories,
            vocab,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn articles(&self) -> &[NewsArticle] {
        &self.articles
    }

    pub fn article(&self, index: usize) -> &NewsArticle {
        &self.articles[index]
    }

    pub fn article_index(&self, id: &str) -> Option<usize> {
        self.article_index.get(id).copied()
    }

    pub fn require_article(&self, id: &str) -> Result<usize> {
        self.article_index(id).ok_or_else(|| Error::Unknown {
            kind: "news",
            id: id.to_string(),
        })
    }

    /// Article indices of one domain, ascending.
    pub fn domain_articles(&self, domain: Domain) -> &[usize] {
        &self.by_domain[slot(domain)]
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn user_name(&self, user: usize) -> &str {
        &self.users[user]
    }

    pub fn user_index(&self, name: &str) -> Option<usize> {
        self.user_index.get(name).copied()
    }

    pub fn history(&self, user: usize, domain: Domain) -> Option<&ReadingHistory> {
        self.histories.get(&(user, domain))
    }

    pub fn histories(&self, domain: Domain) -> impl Iterator<Item = &ReadingHistory> {
        self.histories.values().filter(move |h| h.domain == domain)
    }

    /// Users with reads in both domains.
    pub fn shared_users(&self) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&u| {
                self.history(u, Domain::Source).is_some() && self.history(u, Domain::Target).is_some()
            })
            .collect()
    }
}
