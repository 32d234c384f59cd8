//! Okapi BM25 baseline over an inverted index of retrieval units, sharing
//! the corpus tokenizer so comparisons against the generative ranker are
//! apples to apples.

use std::collections::HashMap;

use super::EvalError;
use crate::corpus::tokenize;
use crate::retrieval::{RankedEntry, RankedList};

const K1: f64 = 1.2;
const B: f64 = 0.75;

struct Posting {
    doc: usize,
    tf: f64,
}

pub struct Bm25Index {
    unit_keys: Vec<String>,
    postings: HashMap<String, Vec<Posting>>,
    doc_len: Vec<f64>,
    avg_len: f64,
}

impl Bm25Index {
    pub fn build<'a>(units: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, EvalError> {
        let mut unit_keys = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::new();
        for (key, text) in units {
            let doc = unit_keys.len();
            unit_keys.push(key.to_string());
            let tokens = tokenize(text);
            doc_len.push(tokens.len() as f64);
            let mut tf: HashMap<String, f64> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_insert(0.0) += 1.0;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { doc, tf: count });
            }
        }
        if unit_keys.is_empty() {
            return Err(EvalError::EmptyIndex);
        }
        let avg_len = doc_len.iter().sum::<f64>() / doc_len.len() as f64;
        Ok(Bm25Index { unit_keys, postings, doc_len, avg_len })
    }

    pub fn len(&self) -> usize {
        self.unit_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_keys.is_empty()
    }

    /// idf(term) = ln((N − df + 0.5) / (df + 0.5) + 1).
    fn idf(&self, df: f64) -> f64 {
        let n = self.unit_keys.len() as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Top-k units by Okapi BM25 (k1 = 1.2, b = 0.75). Query terms absent
    /// from the corpus contribute nothing. Ties break by unit key.
    pub fn rank(&self, query_id: &str, query: &str, k: usize) -> Result<RankedList, EvalError> {
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for term in tokenize(query) {
            let Some(posts) = self.postings.get(&term) else {
                continue;
            };
            let idf = self.idf(posts.len() as f64);
            for p in posts {
                let norm = K1 * (1.0 - B + B * self.doc_len[p.doc] / self.avg_len);
                let contribution = idf * (p.tf * (K1 + 1.0)) / (p.tf + norm);
                *scores.entry(p.doc).or_insert(0.0) += contribution;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| self.unit_keys[a.0].cmp(&self.unit_keys[b.0]))
        });
        ranked.truncate(k);
        Ok(RankedList {
            query_id: query_id.to_string(),
            entries: ranked
                .into_iter()
                .map(|(doc, score)| RankedEntry { unit_key: self.unit_keys[doc].clone(), score })
                .collect(),
        })
    }
}
