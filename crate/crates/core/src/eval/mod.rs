//! Ranking metrics, relevance judgments, and comparison reports.

mod bm25;
mod similarity;

pub use bm25::Bm25Index;
pub use similarity::{flip, jaccard, token_set, win_rate, WinRateCase};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::RankedList;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ranking for query {0} is empty")]
    EmptyRanking(String),
    #[error("no relevance judgments for query {0}")]
    MissingJudgments(String),
    #[error("query {0} has an empty relevant set")]
    EmptyRelevantSet(String),
    #[error("the index contains no documents")]
    EmptyIndex,
    #[error("win-rate case {0} has an empty candidate set")]
    EmptySet(String),
    #[error("malformed line {line} in {file}")]
    Malformed { file: String, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Relevance judgments: query id → set of relevant unit keys.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QRels(pub BTreeMap<String, BTreeSet<String>>);

impl QRels {
    pub fn insert(&mut self, query_id: &str, unit_key: &str) {
        self.0
            .entry(query_id.to_string())
            .or_default()
            .insert(unit_key.to_string());
    }

    pub fn relevant(&self, query_id: &str) -> Option<&BTreeSet<String>> {
        self.0.get(query_id)
    }

    /// TSV format: `query_id TAB unit_key`, one judgment per line.
    pub fn write_tsv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = std::io::BufWriter::new(fs::File::create(path)?);
        for (qid, units) in &self.0 {
            for unit in units {
                writeln!(w, "{qid}\t{unit}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self, EvalError> {
        let f = fs::File::open(path)?;
        let mut qrels = QRels::default();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (qid, unit) = line.split_once('\t').ok_or_else(|| EvalError::Malformed {
                file: path.display().to_string(),
                line: lineno + 1,
            })?;
            qrels.insert(qid, unit);
        }
        Ok(qrels)
    }
}

fn check(ranked: &[String], rel: &BTreeSet<String>, k: usize) -> Result<(), EvalError> {
    assert!(k >= 1, "k must be at least 1");
    if ranked.is_empty() {
        return Err(EvalError::EmptyRanking("<anonymous>".into()));
    }
    if rel.is_empty() {
        return Err(EvalError::EmptyRelevantSet("<anonymous>".into()));
    }
    Ok(())
}

/// 1 when any relevant unit appears in the top k, else 0.
pub fn hit_at_k(ranked: &[String], rel: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(ranked, rel, k)?;
    Ok(ranked.iter().take(k).any(|u| rel.contains(u)) as u8 as f64)
}

/// Reciprocal rank of the first relevant unit within the top k, else 0.
pub fn mrr_at_k(ranked: &[String], rel: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(ranked, rel, k)?;
    Ok(ranked
        .iter()
        .take(k)
        .position(|u| rel.contains(u))
        .map(|i| 1.0 / (i + 1) as f64)
        .unwrap_or(0.0))
}

/// Average precision within the top k: the mean of precision@rank over
/// relevant units found in the top k, normalized by `min(|rel|, k)` so
/// multi-gold queries can still reach 1.
pub fn map_at_k(ranked: &[String], rel: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(ranked, rel, k)?;
    let mut found = 0usize;
    let mut precision_sum = 0.0;
    for (i, unit) in ranked.iter().take(k).enumerate() {
        if rel.contains(unit) {
            found += 1;
            precision_sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(precision_sum / rel.len().min(k) as f64)
}

/// Aggregated metric report: per-query values plus their means.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub label: String,
    /// Metric name → mean over queries.
    pub aggregates: BTreeMap<String, f64>,
    /// Query id → metric name → value.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    /// Configuration echo: which cutoffs were evaluated.
    pub hit_ks: Vec<usize>,
    pub rank_k: usize,
}

/// Evaluate runs against judgments. Every run's query must have a
/// non-empty relevant set.
pub fn evaluate(
    label: &str,
    runs: &[RankedList],
    qrels: &QRels,
    hit_ks: &[usize],
    rank_k: usize,
) -> Result<MetricReport, EvalError> {
    let mut per_query: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for run in runs {
        let rel = qrels
            .relevant(&run.query_id)
            .ok_or_else(|| EvalError::MissingJudgments(run.query_id.clone()))?;
        if rel.is_empty() {
            return Err(EvalError::EmptyRelevantSet(run.query_id.clone()));
        }
        if run.entries.is_empty() {
            return Err(EvalError::EmptyRanking(run.query_id.clone()));
        }
        let ranked: Vec<String> = run.entries.iter().map(|e| e.unit_key.clone()).collect();
        let mut row = BTreeMap::new();
        for &k in hit_ks {
            row.insert(format!("HIT@{k}"), hit_at_k(&ranked, rel, k)?);
        }
        row.insert(format!("MAP@{rank_k}"), map_at_k(&ranked, rel, rank_k)?);
        row.insert(format!("MRR@{rank_k}"), mrr_at_k(&ranked, rel, rank_k)?);
        per_query.insert(run.query_id.clone(), row);
    }
    let mut aggregates = BTreeMap::new();
    if !per_query.is_empty() {
        let n = per_query.len() as f64;
        for row in per_query.values() {
            for (metric, value) in row {
                *aggregates.entry(metric.clone()).or_insert(0.0) += value / n;
            }
        }
    }
    Ok(MetricReport {
        label: label.to_string(),
        aggregates,
        per_query,
        hit_ks: hit_ks.to_vec(),
        rank_k,
    })
}

/// Render reports as an aligned text table, one row per system.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut columns: Vec<String> = Vec::new();
    for r in reports {
        for name in r.aggregates.keys() {
            if !columns.contains(name) {
                columns.push(name.clone());
            }
        }
    }
    // HIT columns ordered by cutoff, then MAP, then MRR.
    columns.sort_by_key(|c| {
        let (family, k) = c.split_once('@').unwrap_or((c.as_str(), "0"));
        let fam_rank = match family {
            "HIT" => 0,
            "MAP" => 1,
            _ => 2,
        };
        (fam_rank, k.parse::<usize>().unwrap_or(0))
    });
    let label_width = reports
        .iter()
        .map(|r| r.label.len())
        .chain(["system".len()].into_iter())
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    out.push_str(&format!("{:<label_width$}", "system"));
    for c in &columns {
        out.push_str(&format!("  {c:>8}"));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<label_width$}", r.label));
        for c in &columns {
            match r.aggregates.get(c) {
                Some(v) => out.push_str(&format!("  {:>8.4}", v)),
                None => out.push_str(&format!("  {:>8}", "-")),
            }
        }
        out.push('\n');
    }
    out
}
