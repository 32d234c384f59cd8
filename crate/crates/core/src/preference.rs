//! Hard-negative mining from the supervised model's own rankings, and
//! assembly of the preference training set.
//!
//! For each preference-stage query, negatives are the retrieval results
//! ranked better than the query's positive unit, capped at k. A query
//! whose positive already ranks first contributes nothing; a positive
//! missing from the list entirely yields the full top-k as negatives.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RankedList;
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("corpus of {corpus} units cannot supply {k} distinct negatives")]
    CorpusTooSmall { corpus: usize, k: usize },
    #[error("no retrieval run found for query {0}")]
    MissingRun(String),
    #[error("query {0} resolves to no positive unit")]
    MissingPositive(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A (query, positive, negative) training instance. `positive_rank` is the
/// positive's 1-based position in the ranking it was mined from; `None`
/// means the positive was absent from the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
    pub positive_rank: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningSource {
    ModelTopk,
    RandomCorpus,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Cap on negatives per query.
    pub k: usize,
    pub source: MiningSource,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig { k: 10, source: MiningSource::ModelTopk }
    }
}

/// Counters describing one mining pass.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MiningStats {
    pub queries: usize,
    /// Queries skipped because the positive already ranked first.
    pub skipped_rank_one: usize,
    pub pairs: usize,
}

/// Mine negatives for one query from its ranking. Pair count is
/// `min(k, rank(positive) - 1)` when the positive appears, `k` otherwise.
pub fn mine(ranked: &RankedList, positive: &str, k: usize) -> Vec<PreferencePair> {
    let rank = ranked.rank_of(positive);
    let take = match rank {
        Some(1) => 0,
        Some(r) => (r - 1).min(k),
        None => k,
    };
    ranked
        .entries
        .iter()
        .filter(|e| e.unit_key != positive)
        .take(take)
        .map(|e| {
            assert_ne!(e.unit_key, positive, "negative must differ from positive");
            PreferencePair {
                query_id: ranked.query_id.clone(),
                positive: positive.to_string(),
                negative: e.unit_key.clone(),
                positive_rank: rank.map(|r| r as u32),
            }
        })
        .collect()
}

/// Baseline: k negatives drawn uniformly without replacement from the
/// corpus, excluding the positive.
pub fn mine_random(
    unit_keys: &[String],
    query_id: &str,
    positive: &str,
    k: usize,
    seed: u64,
) -> Result<Vec<PreferencePair>, PreferenceError> {
    let mut pool: Vec<&String> = unit_keys.iter().filter(|u| u.as_str() != positive).collect();
    if pool.len() < k {
        return Err(PreferenceError::CorpusTooSmall { corpus: unit_keys.len(), k });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    Ok(pool
        .into_iter()
        .take(k)
        .map(|negative| PreferencePair {
            query_id: query_id.to_string(),
            positive: positive.to_string(),
            negative: negative.clone(),
            positive_rank: None,
        })
        .collect())
}

/// Assemble the preference dataset over all queries: `positives` maps each
/// query id to its positive unit; `runs` are the SFT model's rankings of
/// the same queries. Under `RandomCorpus` the rankings are ignored and
/// negatives come from `unit_keys` instead.
pub fn build_pref_dataset(
    positives: &[(String, String)],
    runs: &[RankedList],
    unit_keys: &[String],
    cfg: &MiningConfig,
    seed: u64,
) -> Result<(Vec<PreferencePair>, MiningStats), PreferenceError> {
    let by_query: HashMap<&str, &RankedList> =
        runs.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut stats = MiningStats { queries: positives.len(), ..Default::default() };
    let mut pairs = Vec::new();
    for (query_id, positive) in positives {
        let mined = match cfg.source {
            MiningSource::ModelTopk => {
                let run = by_query
                    .get(query_id.as_str())
                    .ok_or_else(|| PreferenceError::MissingRun(query_id.clone()))?;
                mine(run, positive, cfg.k)
            }
            MiningSource::RandomCorpus => mine_random(
                unit_keys,
                query_id,
                positive,
                cfg.k,
                derive_seed(seed, &["mine-random", query_id]),
            )?,
        };
        if mined.is_empty() {
            stats.skipped_rank_one += 1;
        }
        stats.pairs += mined.len();
        pairs.extend(mined);
    }
    Ok((pairs, stats))
}

/// Tokenize mined pairs into model-ready preference examples. Queries are
/// clipped so the longest identifier still fits in the model context.
pub fn build_rpo_examples(
    pairs: &[PreferencePair],
    queries: &HashMap<String, String>,
    ids: &crate::identifiers::IdTable,
    vocab: &crate::corpus::Vocabulary,
    context: usize,
) -> Result<Vec<crate::model::RpoExample>, PreferenceError> {
    let max_id_len = ids.iter().map(|id| id.tokens.len()).max().unwrap_or(2);
    let query_budget = context.saturating_sub(max_id_len).max(1);
    pairs
        .iter()
        .map(|p| {
            let text = queries
                .get(&p.query_id)
                .ok_or_else(|| PreferenceError::MissingRun(p.query_id.clone()))?;
            let mut query_tokens = vocab.encode(text);
            query_tokens.truncate(query_budget);
            let pos = ids
                .get(&p.positive)
                .ok_or_else(|| PreferenceError::MissingPositive(p.query_id.clone()))?;
            let neg = ids
                .get(&p.negative)
                .ok_or_else(|| PreferenceError::MissingPositive(p.query_id.clone()))?;
            Ok(crate::model::RpoExample {
                query_tokens,
                positive_tokens: pos.tokens.clone(),
                negative_tokens: neg.tokens.clone(),
            })
        })
        .collect()
}

pub fn write_pairs(path: &Path, pairs: &[PreferencePair]) -> Result<(), PreferenceError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PreferencePair>, PreferenceError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RankedEntry;

    fn ranking(query_id: &str, units: &[&str]) -> RankedList {
        RankedList {
            query_id: query_id.to_string(),
            entries: units
                .iter()
                .enumerate()
                .map(|(i, u)| RankedEntry { unit_key: u.to_string(), score: -(i as f64) })
                .collect(),
        }
    }

    #[test]
    fn positive_at_rank_one_yields_nothing() {
        let r = ranking("q", &["pos", "a", "b"]);
        assert!(mine(&r, "pos", 5).is_empty());
    }

    #[test]
    fn positive_at_rank_three_yields_the_two_better() {
        let r = ranking("q", &["a", "b", "pos", "c"]);
        let pairs = mine(&r, "pos", 5);
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].negative, "a");
        assert_eq!(pairs[1].negative, "b");
        assert!(pairs.iter().all(|p| p.positive_rank == Some(3)));
        assert!(pairs.iter().all(|p| p.positive == "pos"));
    }

    #[test]
    fn deep_or_absent_positive_yields_k_pairs() {
        let units: Vec<String> = (0..10).map(|i| format!("u{i}")).collect();
        let mut refs: Vec<&str> = units.iter().map(|s| s.as_str()).collect();
        refs.push("pos");
        let r = ranking("q", &refs); // positive at rank 11
        assert_eq!(mine(&r, "pos", 5).len(), 5);

        let absent = ranking("q", &refs[..10]);
        let pairs = mine(&absent, "pos", 5);
        assert_eq!(pairs.len(), 5);
        assert!(pairs.iter().all(|p| p.positive_rank.is_none()));
    }

    #[test]
    fn mined_negatives_always_outrank_the_positive() {
        let r = ranking("q", &["a", "b", "c", "pos", "d", "e"]);
        for p in mine(&r, "pos", 10) {
            let neg_rank = r.rank_of(&p.negative).unwrap();
            assert!(neg_rank < r.rank_of("pos").unwrap());
        }
    }

    #[test]
    fn random_mining_is_seeded_and_distinct() {
        let units: Vec<String> = (0..30).map(|i| format!("u{i:02}")).collect();
        let a = mine_random(&units, "q", "u05", 5, 7).unwrap();
        let b = mine_random(&units, "q", "u05", 5, 7).unwrap();
        assert_eq!(a, b);
        let c = mine_random(&units, "q", "u05", 5, 8).unwrap();
        assert_ne!(a, c);
        let mut negs: Vec<&str> = a.iter().map(|p| p.negative.as_str()).collect();
        assert!(!negs.contains(&"u05"));
        negs.sort();
        negs.dedup();
        assert_eq!(negs.len(), 5);
    }

    #[test]
    fn random_mining_needs_enough_units() {
        let units: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        assert!(matches!(
            mine_random(&units, "q", "u0", 4, 0),
            Err(PreferenceError::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn random_mining_draws_uniformly() {
        // Chi-square goodness of fit over many seeded single draws: 19
        // candidate negatives, 3800 draws, expected 200 each. The 0.999
        // quantile of chi-square with 18 degrees of freedom is 42.3.
        let units: Vec<String> = (0..20).map(|i| format!("u{i:02}")).collect();
        let mut counts: HashMap<String, usize> = HashMap::new();
        let draws = 3800;
        for seed in 0..draws {
            let p = &mine_random(&units, "q", "u00", 1, seed).unwrap()[0];
            *counts.entry(p.negative.clone()).or_insert(0) += 1;
        }
        let expected = draws as f64 / 19.0;
        let chi2: f64 = counts.values().map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        }).sum();
        assert!(counts.len() == 19);
        assert!(chi2 < 42.3, "chi-square statistic {chi2}");
    }

    #[test]
    fn dataset_assembly_counts_match_per_query_mining() {
        let runs = vec![
            ranking("q1", &["pos1", "a", "b"]),      // rank 1 → skipped
            ranking("q2", &["a", "b", "pos2", "c"]), // rank 3 → 2 pairs
            ranking("q3", &["a", "b", "c"]),         // absent → k pairs
        ];
        let positives = vec![
            ("q1".to_string(), "pos1".to_string()),
            ("q2".to_string(), "pos2".to_string()),
            ("q3".to_string(), "pos3".to_string()),
        ];
        let cfg = MiningConfig { k: 2, source: MiningSource::ModelTopk };
        let (pairs, stats) = build_pref_dataset(&positives, &runs, &[], &cfg, 0).unwrap();
        assert_eq!(stats.queries, 3);
        assert_eq!(stats.skipped_rank_one, 1);
        assert_eq!(stats.pairs, 4);
        assert_eq!(pairs.len(), 4);
        let recount: usize = [
            mine(&runs[0], "pos1", 2).len(),
            mine(&runs[1], "pos2", 2).len(),
            mine(&runs[2], "pos3", 2).len(),
        ]
        .iter()
        .sum();
        assert_eq!(recount, pairs.len());
    }

    #[test]
    fn all_rank_one_positives_yield_an_empty_dataset() {
        let runs = vec![ranking("q1", &["p1", "x"]), ranking("q2", &["p2", "y"])];
        let positives = vec![
            ("q1".to_string(), "p1".to_string()),
            ("q2".to_string(), "p2".to_string()),
        ];
        let (pairs, stats) =
            build_pref_dataset(&positives, &runs, &[], &MiningConfig::default(), 0).unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.skipped_rank_one, 2);
    }

    #[test]
    fn missing_run_is_an_error() {
        let positives = vec![("q9".to_string(), "p".to_string())];
        assert!(matches!(
            build_pref_dataset(&positives, &[], &[], &MiningConfig::default(), 0),
            Err(PreferenceError::MissingRun(_))
        ));
    }

    #[test]
    fn pairs_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![PreferencePair {
            query_id: "q".into(),
            positive: "p".into(),
            negative: "n".into(),
            positive_rank: Some(3),
        }];
        let path = dir.path().join("pairs.jsonl");
        write_pairs(&path, &pairs).unwrap();
        assert_eq!(read_pairs(&path).unwrap(), pairs);
    }

    #[test]
    fn mining_rules_hold_over_random_rankings() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let n = rng.random_range(1..=15usize);
            let mut units: Vec<String> = (0..n).map(|i| format!("u{i:02}")).collect();
            units.shuffle(&mut rng);
            let refs: Vec<&str> = units.iter().map(|s| s.as_str()).collect();
            let r = ranking("q", &refs);
            let k = rng.random_range(1..=10usize);
            let positive = if rng.random_bool(0.8) {
                units[rng.random_range(0..n)].clone()
            } else {
                "missing".to_string()
            };
            let pairs = mine(&r, &positive, k);
            match r.rank_of(&positive) {
                Some(1) => assert!(pairs.is_empty()),
                Some(rank) => assert_eq!(pairs.len(), (rank - 1).min(k)),
                None => assert_eq!(pairs.len(), k.min(r.entries.len())),
            }
            for p in &pairs {
                assert_ne!(p.negative, positive);
                if let Some(rank) = r.rank_of(&positive) {
                    assert!(r.rank_of(&p.negative).unwrap() < rank);
                }
            }
        }
    }
}
