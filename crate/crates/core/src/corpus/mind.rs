//! Conversion of MIND `news.tsv` / `behaviors.tsv` into the two-domain corpus
//! files.
//!
//! Articles of `source_category` become domain S, of `target_category`
//! domain T; all others are dropped. Title and abstract form the text. A
//! user's click history (which MIND stores without times) is placed just
//! before that user's first impression, one second apart; clicked
//! impression items take the impression time plus their offset.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDateTime;

use crate::error::{Error, Result};

use super::{Domain, EventRecord, NewsRecord};

const TIME_FORMAT: &str = "%m/%d/%Y %I:%M:%S %p";

pub fn convert(
    news_tsv: &str,
    behaviors_tsv: &str,
    source_category: &str,
    target_category: &str,
) -> Result<(Vec<NewsRecord>, Vec<EventRecord>)> {
    let bad = |line: usize, message: String| Error::Parse {
        path: "behaviors.tsv".into(),
        line,
        message,
    };

    let mut news = Vec::new();
    let mut domain_of: HashMap<String, Domain> = HashMap::new();
    for (i, line) in news_tsv.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 {
            return Err(Error::Parse {
                path: "news.tsv".into(),
                line: i + 1,
                message: "expected at least 5 fields".into(),
            });
        }
        let domain = if f[1] == source_category {
            Domain::Source
        } else if f[1] == target_category {
            Domain::Target
        } else {
            continue;
        };
        domain_of.insert(f[0].to_string(), domain);
        news.push(NewsRecord {
            id: f[0].to_string(),
            domain,
            text: format!("{} {}", f[3], f[4]).trim().to_string(),
        });
    }

    // user -> (first impression time, history, [(time, clicked)])
    struct UserLog {
        first: i64,
        history: Vec<String>,
        clicks: Vec<(i64, String)>,
    }
    let mut logs: BTreeMap<String, UserLog> = BTreeMap::new();
    for (i, line) in behaviors_tsv.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 {
            return Err(bad(i + 1, "expected 5 fields".into()));
        }
        let time = NaiveDateTime::parse_from_str(f[2], TIME_FORMAT)
            .map_err(|e| bad(i + 1, format!("bad time `{}`: {e}", f[2])))?
            .and_utc()
            .timestamp();
        let log = logs.entry(f[1].to_string()).or_insert_with(|| UserLog {
            first: time,
            history: f[3].split_whitespace().map(String::from).collect(),
            clicks: Vec::new(),
        });
        if time < log.first {
            log.first = time;
            log.history = f[3].split_whitespace().map(String::from).collect();
        }
        for (j, item) in f[4].split_whitespace().enumerate() {
            if let Some(id) = item.strip_suffix("-1") {
                log.clicks.push((time * 1000 + j as i64, id.to_string()));
            }
        }
    }

    let mut events = Vec::new();
    for (user, log) in logs {
        let n = log.history.len() as i64;
        let timed = log
            .history
            .into_iter()
            .enumerate()
            .map(|(k, id)| ((log.first - n + k as i64) * 1000, id))
            .chain(log.clicks);
        let mut seen = HashSet::new();
        for (ts, id) in timed {
            let Some(&domain) = domain_of.get(&id) else {
                continue;
            };
            if seen.insert((id.clone(), ts)) {
                events.push(EventRecord {
                    user: user.clone(),
                    news: id,
                    domain,
                    timestamp: ts,
                });
            }
        }
    }
    Ok((news, events))
}
