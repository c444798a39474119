//! Tab-separated corpus files.
//!
//! News: `news_id<TAB>domain<TAB>text`. Events: `user<TAB>news_id<TAB>domain<TAB>timestamp`.
//! Domain is `S` or `T`; files are UTF-8, one record per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Domain, EventRecord, NewsRecord};

pub const NEWS_FILE: &str = "news.tsv";
pub const EVENTS_FILE: &str = "events.tsv";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const SPLIT_FILE: &str = "split.tsv";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn clean(text: &str) -> String {
    text.replace(['\t', '\n', '\r'], " ")
}

pub fn parse_news(content: &str, path: &Path) -> Result<Vec<NewsRecord>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(path, i + 1, "expected 3 tab-separated fields"));
        }
        let domain: Domain = fields[1].parse().map_err(|m: String| parse_err(path, i + 1, m))?;
        out.push(NewsRecord {
            id: fields[0].to_string(),
            domain,
            text: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn parse_events(content: &str, path: &Path) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(path, i + 1, "expected 4 tab-separated fields"));
        }
        let domain: Domain = fields[2].parse().map_err(|m: String| parse_err(path, i + 1, m))?;
        let timestamp = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad timestamp `{}`", fields[3])))?;
        out.push(EventRecord {
            user: fields[0].to_string(),
            news: fields[1].to_string(),
            domain,
            timestamp,
        });
    }
    Ok(out)
}

pub fn read_news(path: &Path) -> Result<Vec<NewsRecord>> {
    parse_news(&read(path)?, path)
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    parse_events(&read(path)?, path)
}

pub fn format_news(news: &[NewsRecord]) -> String {
    let mut s = String::new();
    for n in news {
        let _ = writeln!(s, "{}\t{}\t{}", n.id, n.domain, clean(&n.text));
    }
    s
}

pub fn format_events(events: &[EventRecord]) -> String {
    let mut s = String::new();
    for e in events {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", e.user, e.news, e.domain, e.timestamp);
    }
    s
}

pub fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Reads `news.tsv` and `events.tsv` from `dir`.
pub fn read_corpus_dir(dir: &Path) -> Result<(Vec<NewsRecord>, Vec<EventRecord>)> {
    Ok((read_news(&dir.join(NEWS_FILE))?, read_events(&dir.join(EVENTS_FILE))?))
}

pub fn write_corpus_dir(dir: &Path, news: &[NewsRecord], events: &[EventRecord]) -> Result<()> {
    write_file(&dir.join(NEWS_FILE), &format_news(news))?;
    write_file(&dir.join(EVENTS_FILE), &format_events(events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn news_text_may_not_break_records() {
        let n = vec![NewsRecord {
            id: "n1".into(),
            domain: Domain::Target,
            text: "a\tb\nc".into(),
        }];
        let s = format_news(&n);
        assert_eq!(s, "n1\tT\ta b c\n");
        let back = parse_news(&s, Path::new("x")).unwrap();
        assert_eq!(back[0].text, "a b c");
    }

    #[test]
    fn events_round_trip_and_errors_carry_line_numbers() {
        let s = "u1\tn1\tS\t10\nu1\tn2\tT\t-3\n";
        let e = parse_events(s, Path::new("ev")).unwrap();
        assert_eq!(format_events(&e), s);
        let err = parse_events("u\tn\tS\t1\nu\tn\tX\t2\n", Path::new("ev")).unwrap_err();
        assert!(err.to_string().starts_with("ev:2:"), "{err}");
        assert!(parse_events("u\tn\tS\n", Path::new("ev")).is_err());
        assert!(parse_events("u\tn\tS\tsoon\n", Path::new("ev")).is_err());
    }
}
