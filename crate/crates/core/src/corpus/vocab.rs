use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::Domain;

/// Reserved id for out-of-vocabulary words (trainable row).
pub const OOV_ID: u32 = 0;
/// Reserved padding id (frozen zero row, never averaged).
pub const PAD_ID: u32 = 1;
pub const RESERVED: usize = 2;

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(String::from).collect();
    if tokens.is_empty() {
        return Err(Error::Empty(format!("no tokens in {text:?}")));
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabEntry {
    pub word: String,
    pub in_source: bool,
    pub in_target: bool,
}

impl VocabEntry {
    pub fn flags(&self) -> &'static str {
        match (self.in_source, self.in_target) {
            (true, true) => "ST",
            (true, false) => "S",
            (false, true) => "T",
            (false, false) => "-",
        }
    }
}

/// Word ids over both domains. With sharing on, a word seen in both domains
/// owns a single id; with sharing off every (word, domain) pair owns one.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<(String, Option<Domain>), u32>,
    shared: bool,
}

impl Vocabulary {
    fn key(&self, word: &str, domain: Domain) -> (String, Option<Domain>) {
        (word.to_string(), (!self.shared).then_some(domain))
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    /// Rows of the embedding matrix, reserved ids included.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.len() <= RESERVED
    }

    /// Number of real words, reserved ids excluded.
    pub fn word_count(&self) -> usize {
        self.entries.len() - RESERVED
    }

    pub fn entry(&self, id: u32) -> Option<&VocabEntry> {
        self.entries.get(id as usize)
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn lookup(&self, word: &str, domain: Domain) -> u32 {
        self.index
            .get(&self.key(word, domain))
            .copied()
            .unwrap_or(OOV_ID)
    }

    pub fn encode(&self, tokens: &[String], domain: Domain) -> Vec<u32> {
        tokens.iter().map(|t| self.lookup(t, domain)).collect()
    }

    /// Tokenize then look up; unknown words become [`OOV_ID`].
    pub fn encode_text(&self, text: &str, domain: Domain) -> Result<Vec<u32>> {
        Ok(self.encode(&tokenize(text)?, domain))
    }

    /// `word<TAB>id<TAB>flags` lines sorted by id.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", e.word, id, e.flags());
        }
        out
    }
}

/// Builds the vocabulary from tokenized articles of both domains.
///
/// Words occurring fewer than `min_count` times (counted over both domains
/// when shared, per domain otherwise) are left out and encode as OOV.
pub fn build_vocabulary(
    source_docs: &[Vec<String>],
    target_docs: &[Vec<String>],
    min_count: usize,
    shared: bool,
) -> Result<Vocabulary> {
    if source_docs.is_empty() || target_docs.is_empty() {
        return Err(Error::Empty("vocabulary needs articles in both domains".into()));
    }
    let count = |docs: &[Vec<String>]| {
        let mut c: BTreeMap<String, usize> = BTreeMap::new();
        for w in docs.iter().flatten() {
            *c.entry(w.clone()).or_default() += 1;
        }
        c
    };
    let (src, tgt) = (count(source_docs), count(target_docs));

    let mut entries = vec![
        VocabEntry {
            word: "<oov>".into(),
            in_source: true,
            in_target: true,
        },
        VocabEntry {
            word: "<pad>".into(),
            in_source: true,
            in_target: true,
        },
    ];
    let mut index = HashMap::new();

    if shared {
        let words: BTreeSet<&String> = src.keys().chain(tgt.keys()).collect();
        for w in words {
            let (s, t) = (
                src.get(w).copied().unwrap_or(0),
                tgt.get(w).copied().unwrap_or(0),
            );
            if s + t < min_count {
                continue;
            }
            index.insert((w.clone(), None), entries.len() as u32);
            entries.push(VocabEntry {
                word: w.clone(),
                in_source: s > 0,
                in_target: t > 0,
            });
        }
    } else {
        for (domain, counts) in [(Domain::Source, &src), (Domain::Target, &tgt)] {
            for (w, &c) in counts {
                if c < min_count {
                    continue;
                }
                index.insert((w.clone(), Some(domain)), entries.len() as u32);
                entries.push(VocabEntry {
                    word: w.clone(),
                    in_source: domain == Domain::Source,
                    in_target: domain == Domain::Target,
                });
            }
        }
    }
    Ok(Vocabulary {
        entries,
        index,
        shared,
    })
}
