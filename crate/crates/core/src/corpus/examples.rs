use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

use super::{Corpus, Domain, ReadingHistory};

/// `(history, candidate, label)` for one user. `history` holds article
/// indices read strictly before the candidate, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub user: usize,
    pub history: Vec<usize>,
    pub candidate: usize,
    pub label: u8,
}

/// Slides over `events`: position `c` becomes a positive whose history is
/// the latest `min(c, max_history)` earlier reads.
pub fn generate_positive_examples(history: &ReadingHistory, max_history: usize) -> Vec<TrainingExample> {
    positives_from(history.user, &history.articles().collect::<Vec<_>>(), max_history)
}

pub(crate) fn positives_from(user: usize, articles: &[usize], max_history: usize) -> Vec<TrainingExample> {
    (1..articles.len())
        .map(|c| TrainingExample {
            user,
            history: articles[c.saturating_sub(max_history)..c].to_vec(),
            candidate: articles[c],
            label: 1,
        })
        .collect()
}

/// Uniform draw from `candidates` outside `exclude`.
pub fn sample_negative<R: Rng + ?Sized>(
    candidates: &[usize],
    exclude: &HashSet<usize>,
    rng: &mut R,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Unsampleable(0));
    }
    for _ in 0..64 {
        let c = candidates[rng.random_range(0..candidates.len())];
        if !exclude.contains(&c) {
            return Ok(c);
        }
    }
    let admissible: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|c| !exclude.contains(c))
        .collect();
    if admissible.is_empty() {
        return Err(Error::Unsampleable(candidates.len()));
    }
    Ok(admissible[rng.random_range(0..admissible.len())])
}

/// Interleaves every positive with `ratio` negatives that share its history.
/// Negatives avoid everything in `full_history(user)`.
pub fn with_negatives<R, F>(
    positives: &[TrainingExample],
    candidates: &[usize],
    ratio: usize,
    mut full_history: F,
    rng: &mut R,
) -> Result<Vec<TrainingExample>>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> HashSet<usize>,
{
    let mut out = Vec::with_capacity(positives.len() * (1 + ratio));
    let mut cache: Option<(usize, HashSet<usize>)> = None;
    for p in positives {
        if cache.as_ref().map(|(u, _)| *u) != Some(p.user) {
            cache = Some((p.user, full_history(p.user)));
        }
        let exclude = &cache.as_ref().expect("filled").1;
        out.push(p.clone());
        for _ in 0..ratio {
            out.push(TrainingExample {
                user: p.user,
                history: p.history.clone(),
                candidate: sample_negative(candidates, exclude, rng)?,
                label: 0,
            });
        }
    }
    Ok(out)
}

/// Train/test partition of users; every train user with at least two
/// target-domain reads holds out the last one for validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// user -> position of the held-out event in that user's target history.
    pub validation: BTreeMap<usize, usize>,
}

impl UserSplit {
    pub fn is_train(&self, user: usize) -> bool {
        self.train.binary_search(&user).is_ok()
    }

    pub fn is_test(&self, user: usize) -> bool {
        self.test.binary_search(&user).is_ok()
    }

    /// Reserves each train user's last read in `domain`.
    pub fn reserve_validation(&mut self, corpus: &Corpus, domain: Domain) {
        self.validation = self
            .train
            .iter()
            .filter_map(|&u| {
                let h = corpus.history(u, domain)?;
                (h.len() >= 2).then(|| (u, h.len() - 1))
            })
            .collect();
    }

    /// `user<TAB>train|test` lines.
    pub fn dump(&self, corpus: &Corpus) -> String {
        let mut rows: Vec<(usize, &str)> = self
            .train
            .iter()
            .map(|&u| (u, "train"))
            .chain(self.test.iter().map(|&u| (u, "test")))
            .collect();
        rows.sort();
        rows.iter()
            .map(|(u, s)| format!("{}\t{}\n", corpus.user_name(*u), s))
            .collect()
    }
}

/// Shuffles `users` with the seed's `split` stream and cuts at
/// `round(ratio * n)`, keeping at least one user on each side.
pub fn split_users(users: &[usize], ratio: f64, seed: u64) -> Result<UserSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("data.train_ratio", format!("{ratio} is not in (0, 1)")));
    }
    if users.len() < 2 {
        return Err(Error::Precondition(format!(
            "need at least 2 users to split, got {}",
            users.len()
        )));
    }
    let mut order = users.to_vec();
    order.sort_unstable();
    order.dedup();
    order.shuffle(&mut rng::stream(seed, "split"));
    let n_train = ((ratio * order.len() as f64).round() as usize).clamp(1, order.len() - 1);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(UserSplit {
        train,
        test,
        validation: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ReadEvent;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn hist(articles: &[usize]) -> ReadingHistory {
        ReadingHistory {
            user: 0,
            domain: Domain::Target,
            events: articles
                .iter()
                .enumerate()
                .map(|(i, &a)| ReadEvent {
                    article: a,
                    timestamp: i as i64,
                })
                .collect(),
        }
    }

    #[test]
    fn sliding_window_three_events() {
        let ex = generate_positive_examples(&hist(&[1, 2, 3]), 10);
        assert_eq!(ex.len(), 2);
        assert_eq!((ex[0].history.clone(), ex[0].candidate), (vec![1], 2));
        assert_eq!((ex[1].history.clone(), ex[1].candidate), (vec![1, 2], 3));
        assert!(ex.iter().all(|e| e.label == 1));
    }

    #[test]
    fn single_event_has_no_positives() {
        assert!(generate_positive_examples(&hist(&[7]), 3).is_empty());
    }

    #[test]
    fn history_truncates_to_latest() {
        let articles: Vec<usize> = (1..=12).collect();
        let ex = generate_positive_examples(&hist(&articles), 10);
        let last = ex.last().unwrap();
        assert_eq!(last.candidate, 12);
        assert_eq!(last.history, (2..=11).collect::<Vec<_>>());
    }

    #[test]
    fn single_admissible_negative() {
        let mut r = rng::StreamRng::seed_from_u64(1);
        let ex: HashSet<usize> = [0, 1].into_iter().collect();
        for _ in 0..20 {
            assert_eq!(sample_negative(&[0, 1, 2], &ex, &mut r).unwrap(), 2);
        }
    }

    #[test]
    fn exhausted_corpus_is_unsampleable() {
        let mut r = rng::StreamRng::seed_from_u64(1);
        let ex: HashSet<usize> = [0].into_iter().collect();
        assert!(matches!(sample_negative(&[0], &ex, &mut r), Err(Error::Unsampleable(1))));
    }

    fn chi_square_critical(df: f64, z: f64) -> f64 {
        // Wilson-Hilferty approximation of the chi-square quantile.
        let a = 2.0 / (9.0 * df);
        df * (1.0 - a + z * a.sqrt()).powi(3)
    }

    #[test]
    fn negatives_are_uniform_over_admissible_ids() {
        let corpus: Vec<usize> = (0..1000).collect();
        let exclude: HashSet<usize> = (0..1000).step_by(100).collect();
        let mut counts = vec![0usize; 1000];
        let mut r = rng::StreamRng::seed_from_u64(99);
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_negative(&corpus, &exclude, &mut r).unwrap()] += 1;
        }
        assert!(exclude.iter().all(|&i| counts[i] == 0));
        let expected = draws as f64 / 990.0;
        let chi2: f64 = (0..1000)
            .filter(|i| !exclude.contains(i))
            .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < chi_square_critical(989.0, 3.09), "chi2 = {chi2}");
    }

    #[test]
    fn split_ratio_nine_to_one() {
        let users: Vec<usize> = (0..10).collect();
        let s = split_users(&users, 0.9, 5).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (9, 1));
        assert_eq!(s, split_users(&users, 0.9, 5).unwrap());
    }

    #[test]
    fn split_rejects_bad_ratio() {
        let users: Vec<usize> = (0..10).collect();
        let err = split_users(&users, 1.5, 5).unwrap_err();
        assert!(err.is_config());
        assert!(split_users(&[3], 0.5, 5).is_err());
    }

    proptest! {
        #[test]
        fn positive_count_is_length_minus_one(n in 0usize..40, l in 1usize..12) {
            let articles: Vec<usize> = (0..n).collect();
            let ex = generate_positive_examples(&hist(&articles), l);
            prop_assert_eq!(ex.len(), n.saturating_sub(1));
            for e in &ex {
                prop_assert!(!e.history.is_empty() && e.history.len() <= l);
                prop_assert_eq!(*e.history.last().unwrap() + 1, e.candidate);
            }
        }

        #[test]
        fn split_partitions_users(n in 2usize..200, ratio in 0.05f64..0.95, seed in any::<u64>()) {
            let users: Vec<usize> = (0..n).collect();
            let s = split_users(&users, ratio, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, users);
            prop_assert!(s.train.iter().all(|u| !s.is_test(*u)));
        }
    }
}
