//! Token-set similarity between queries, and the win-rate comparison of
//! two synthetic-query sets against a shared pool of test queries.

use std::collections::BTreeSet;

use super::EvalError;
use crate::corpus::tokenize;

/// Normalized token set: lowercase, punctuation dropped, whitespace split.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(|c| c.is_alphanumeric()))
        .collect()
}

/// Jaccard similarity of the two texts' token sets; 1 when both are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa = token_set(a);
    let sb = token_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// One test query with the synthetic candidates each side generated for
/// the query's source unit.
#[derive(Debug, Clone)]
pub struct WinRateCase {
    pub test_query: String,
    pub side_a: Vec<String>,
    pub side_b: Vec<String>,
}

/// Fraction of test queries where side A's best Jaccard similarity is
/// strictly greater than side B's. Ties count for neither side, so
/// `win_rate(S, S) = 0` and the two directions sum to at most 1.
pub fn win_rate(cases: &[WinRateCase]) -> Result<f64, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptySet("<no cases>".into()));
    }
    let mut wins = 0usize;
    for case in cases {
        if case.side_a.is_empty() || case.side_b.is_empty() {
            return Err(EvalError::EmptySet(case.test_query.clone()));
        }
        let best = |side: &[String]| {
            side.iter()
                .map(|s| jaccard(&case.test_query, s))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        if best(&case.side_a) > best(&case.side_b) {
            wins += 1;
        }
    }
    Ok(wins as f64 / cases.len() as f64)
}

/// Swap the two sides of every case.
pub fn flip(cases: &[WinRateCase]) -> Vec<WinRateCase> {
    cases
        .iter()
        .map(|c| WinRateCase {
            test_query: c.test_query.clone(),
            side_a: c.side_b.clone(),
            side_b: c.side_a.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jaccard_identities() {
        assert_eq!(jaccard("the cat sat", "The cat sat!"), 1.0);
        assert_eq!(jaccard("alpha beta", "gamma delta"), 0.0);
        assert_eq!(jaccard("", ""), 1.0);
        assert_eq!(jaccard("...", "!!!"), 1.0); // punctuation-only both empty
    }

    #[test]
    fn jaccard_half_overlap() {
        // {a,b,c} vs {b,c,d}: 2 shared of 4 total.
        assert!((jaccard("aa bb cc", "bb cc dd") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn jaccard_is_symmetric() {
        let pairs = [
            ("one two three", "two three four"),
            ("x", "x y z"),
            ("", "nonempty"),
        ];
        for (a, b) in pairs {
            assert_eq!(jaccard(a, b), jaccard(b, a));
        }
    }

    #[test]
    fn hand_worked_win_rate() {
        // Case 1: A max 0.8 vs B max 0.5; case 2: A max 0.2 vs B max 0.5
        // → win rate 0.5.
        let q = "aa bb cc dd ee";
        let cases = vec![
            WinRateCase {
                test_query: q.into(),
                side_a: vec!["aa bb cc dd".into()],     // 4/5 = 0.8
                side_b: vec!["aa bb cc zz".into()],     // 3/6 = 0.5
            },
            WinRateCase {
                test_query: q.into(),
                side_a: vec!["aa".into()],              // 1/5 = 0.2
                side_b: vec!["aa bb cc zz".into()],     // 0.5
            },
        ];
        assert!((win_rate(&cases).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn self_comparison_wins_nothing() {
        let cases = vec![WinRateCase {
            test_query: "aa bb".into(),
            side_a: vec!["aa".into(), "bb cc".into()],
            side_b: vec!["aa".into(), "bb cc".into()],
        }];
        assert_eq!(win_rate(&cases).unwrap(), 0.0);
        assert_eq!(win_rate(&flip(&cases)).unwrap(), 0.0);
    }

    #[test]
    fn directions_sum_to_at_most_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(77);
        let vocab = ["aa", "bb", "cc", "dd", "ee", "ff", "gg"];
        let sentence = |rng: &mut rand_chacha::ChaCha20Rng| {
            let n = rng.random_range(1..=4);
            (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
        };
        for _ in 0..200 {
            let cases: Vec<WinRateCase> = (0..rng.random_range(1..=5))
                .map(|_| WinRateCase {
                    test_query: sentence(&mut rng),
                    side_a: (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng)).collect(),
                    side_b: (0..rng.random_range(1..=3)).map(|_| sentence(&mut rng)).collect(),
                })
                .collect();
            let ab = win_rate(&cases).unwrap();
            let ba = win_rate(&flip(&cases)).unwrap();
            assert!(ab + ba <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn empty_sides_are_errors() {
        let cases = vec![WinRateCase {
            test_query: "aa".into(),
            side_a: vec![],
            side_b: vec!["aa".into()],
        }];
        assert!(matches!(win_rate(&cases), Err(EvalError::EmptySet(_))));
        assert!(matches!(win_rate(&[]), Err(EvalError::EmptySet(_))));
    }
}
