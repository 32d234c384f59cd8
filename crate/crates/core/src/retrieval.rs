//! Trie-constrained beam search over identifier space, plus one-step
//! ranking for atomic identifiers.
//!
//! The search explores only prefixes that exist in the trie, so every
//! emitted sequence is a complete identifier. Candidate pruning runs on an
//! incremental key/value cache; the scores reported in the final ranking
//! are recomputed through the canonical full forward pass, making beam
//! output exactly comparable with exhaustive scoring.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::EOI;
use crate::identifiers::{allowed_next, IdError, IdTrie, NextTokens};
use crate::model::{score_identifier, ModelError, ModelParams, ScoreCache};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("the identifier trie is empty")]
    EmptyTrie,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Id(#[from] IdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One decoding hypothesis, as visible to callers inspecting the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub prefix: Vec<u32>,
    pub logprob: f64,
    pub terminal: bool,
}

/// Live hypothesis: its cache has consumed `[BOS, query, prefix]`, and
/// `next_dist` is the distribution over the following token.
struct LiveHyp {
    prefix: Vec<u32>,
    logprob: f64,
    cache: ScoreCache,
    next_dist: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub unit_key: String,
    pub score: f64,
}

/// Ordered retrieval results for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn unit_keys(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.unit_key.as_str()).collect()
    }

    /// 1-based rank of `unit_key`, if present.
    pub fn rank_of(&self, unit_key: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.unit_key == unit_key).map(|i| i + 1)
    }
}

/// Deterministic ordering: higher score first, then lexicographically
/// smaller token sequence.
fn better(score_a: f64, seq_a: &[u32], score_b: f64, seq_b: &[u32]) -> Ordering {
    score_b
        .partial_cmp(&score_a)
        .unwrap_or(Ordering::Equal)
        .then_with(|| seq_a.cmp(seq_b))
}

enum Candidate {
    /// Index into the previous terminal list.
    Frozen(usize),
    /// (index into live list, extension token).
    Extend(usize, u32),
}

/// Decode up to `beam` identifiers for the query, constrained to the trie.
///
/// Each step expands every live hypothesis over its `allowed_next` tokens,
/// then keeps the best `beam` candidates with terminals counted in the
/// selection (a terminal is frozen and merely retained). Ties break toward
/// the lexicographically smaller token sequence.
pub fn constrained_beam_search(
    params: &ModelParams,
    trie: &IdTrie,
    query_id: &str,
    query_tokens: &[u32],
    beam: usize,
) -> Result<RankedList, RetrievalError> {
    assert!(beam >= 1, "beam must be at least 1");
    if trie.is_empty() {
        return Err(RetrievalError::EmptyTrie);
    }
    // Leave room in the context for the longest identifier.
    let budget = params.cfg.context.saturating_sub(trie.max_depth() + 1).max(1);
    let query_tokens: &[u32] = if query_tokens.len() > budget {
        &query_tokens[..budget]
    } else {
        query_tokens
    };

    let (root_cache, root_dist) = ScoreCache::start(params, query_tokens)?;
    let mut live = vec![LiveHyp {
        prefix: Vec::new(),
        logprob: 0.0,
        cache: root_cache,
        next_dist: root_dist,
    }];
    let mut terminals: Vec<(Vec<u32>, f64)> = Vec::new();

    while !live.is_empty() {
        let mut candidates: Vec<(Candidate, f64)> = Vec::new();
        for (j, (_, lp)) in terminals.iter().enumerate() {
            candidates.push((Candidate::Frozen(j), *lp));
        }
        for (i, hyp) in live.iter().enumerate() {
            let allowed = match allowed_next(trie, &hyp.prefix)? {
                NextTokens::Allowed(tokens) => tokens,
                NextTokens::Terminal(_) => unreachable!("live hypotheses are never terminal"),
            };
            for tok in allowed {
                candidates.push((
                    Candidate::Extend(i, tok),
                    hyp.logprob + hyp.next_dist[tok as usize],
                ));
            }
        }
        candidates.sort_by(|(ca, sa), (cb, sb)| {
            better(*sa, &candidate_seq(ca, &terminals, &live), *sb, &candidate_seq(cb, &terminals, &live))
        });
        candidates.truncate(beam);

        let mut next_terminals = Vec::new();
        let mut next_live = Vec::new();
        for (cand, score) in candidates {
            match cand {
                Candidate::Frozen(j) => next_terminals.push(terminals[j].clone()),
                Candidate::Extend(i, tok) => {
                    let mut prefix = live[i].prefix.clone();
                    prefix.push(tok);
                    if tok == EOI {
                        next_terminals.push((prefix, score));
                    } else {
                        let mut cache = live[i].cache.clone();
                        let next_dist = cache.advance(params, tok)?;
                        next_live.push(LiveHyp { prefix, logprob: score, cache, next_dist });
                    }
                }
            }
        }
        terminals = next_terminals;
        live = next_live;
    }

    // Rescore every terminal through the canonical scoring path and order
    // by (score desc, token sequence asc).
    let mut finished: Vec<(Vec<u32>, f64)> = terminals
        .into_iter()
        .map(|(prefix, _)| {
            let score = score_identifier(params, query_tokens, &prefix)?;
            Ok((prefix, score))
        })
        .collect::<Result<_, RetrievalError>>()?;
    finished.sort_by(|a, b| better(a.1, &a.0, b.1, &b.0));
    let entries = finished
        .into_iter()
        .map(|(tokens, score)| {
            let unit_key = match allowed_next(trie, &tokens)? {
                NextTokens::Terminal(unit) => unit.to_string(),
                NextTokens::Allowed(_) => unreachable!("finished prefixes are terminals"),
            };
            Ok(RankedEntry { unit_key, score })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    Ok(RankedList { query_id: query_id.to_string(), entries })
}

fn candidate_seq(c: &Candidate, terminals: &[(Vec<u32>, f64)], live: &[LiveHyp]) -> Vec<u32> {
    match c {
        Candidate::Frozen(j) => terminals[*j].0.clone(),
        Candidate::Extend(i, tok) => {
            let mut v = live[*i].prefix.clone();
            v.push(*tok);
            v
        }
    }
}

/// Score every identifier exhaustively and rank all of them. This is the
/// oracle that beam search must match whenever `beam >= |ids|`.
pub fn exhaustive_rank(
    params: &ModelParams,
    ids: &crate::identifiers::IdTable,
    query_id: &str,
    query_tokens: &[u32],
    k: usize,
) -> Result<RankedList, RetrievalError> {
    if ids.is_empty() {
        return Err(RetrievalError::EmptyTrie);
    }
    let mut scored: Vec<(Vec<u32>, f64, String)> = ids
        .iter()
        .map(|id| {
            let score = score_identifier(params, query_tokens, &id.tokens)?;
            Ok((id.tokens.clone(), score, id.unit_key.clone()))
        })
        .collect::<Result<_, RetrievalError>>()?;
    scored.sort_by(|a, b| better(a.1, &a.0, b.1, &b.0));
    scored.truncate(k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(_, score, unit_key)| RankedEntry { unit_key, score })
            .collect(),
    })
}

/// Rank atomic identifiers by the next-token log-probability at the first
/// decode position. Raw log-probabilities are reported, not renormalized
/// over the atomic slice.
pub fn atomic_rank(
    params: &ModelParams,
    ids: &crate::identifiers::IdTable,
    query_id: &str,
    query_tokens: &[u32],
    k: usize,
) -> Result<RankedList, RetrievalError> {
    if ids.is_empty() {
        return Err(RetrievalError::EmptyTrie);
    }
    let budget = params.cfg.context.saturating_sub(2).max(1);
    let query_tokens: &[u32] = if query_tokens.len() > budget {
        &query_tokens[..budget]
    } else {
        query_tokens
    };
    // Appending a probe token exposes the distribution row after the last
    // query token; the probe's own probability is never read.
    let mut probed = query_tokens.to_vec();
    probed.push(EOI);
    let lp = crate::model::logprobs(params, &probed)?;
    let last = lp.nrows() - 1;
    let mut scored: Vec<(u32, f64, String)> = ids
        .iter()
        .map(|id| {
            let tok = id.tokens[0];
            (tok, lp[[last, tok as usize]], id.unit_key.clone())
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: scored
            .into_iter()
            .map(|(_, score, unit_key)| RankedEntry { unit_key, score })
            .collect(),
    })
}

/// Run retrieval for a batch of queries in parallel, preserving input
/// order in the output.
pub fn batch_retrieve(
    params: &ModelParams,
    trie: &IdTrie,
    queries: &[(String, Vec<u32>)],
    beam: usize,
) -> Result<Vec<RankedList>, RetrievalError> {
    queries
        .par_iter()
        .map(|(qid, toks)| constrained_beam_search(params, trie, qid, toks, beam))
        .collect()
}

// ---------------------------------------------------------------------------
// Runs file
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RunRecord {
    query_id: String,
    ranked: Vec<String>,
    logprobs: Vec<f64>,
}

pub fn write_runs(path: &Path, runs: &[RankedList]) -> Result<(), RetrievalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for run in runs {
        let rec = RunRecord {
            query_id: run.query_id.clone(),
            ranked: run.entries.iter().map(|e| e.unit_key.clone()).collect(),
            logprobs: run.entries.iter().map(|e| e.score).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RankedList>, RetrievalError> {
    let f = fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(&line)?;
        out.push(RankedList {
            query_id: rec.query_id,
            entries: rec
                .ranked
                .into_iter()
                .zip(rec.logprobs)
                .map(|(unit_key, score)| RankedEntry { unit_key, score })
                .collect(),
        });
    }
    Ok(out)
}
