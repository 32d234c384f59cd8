//! Synthetic query generation: prompt rendering, gateway calls, and
//! salvage parsing of the Markdown lists that come back.
//!
//! Three query families feed supervised training — chunk-level,
//! sentence-level, and metadata-constrained — and a fourth (hard
//! query/answer pairs) feeds the preference stage. Output order is
//! canonical (unit key, then list position) regardless of how generation
//! was scheduled.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize_spanned, CorpusStore, Chunk, Document, Sentence};
use crate::gateway::{metadata_lines, GatewayError, GenRequest, LlmGateway};
use crate::seeding::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no list items could be parsed from the completion")]
    UnparseableResponse,
    #[error("document {0} has no metadata to build constraints from")]
    NoMetadata(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Chunk,
    Sentence,
    Constraints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sft,
    Preference,
}

/// One generated query, tied to the corpus unit it was generated from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_text: String,
    pub source_unit: String,
    pub granularity: Granularity,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Per-unit generation budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenBudget {
    /// Chunk-level queries per chunk.
    pub m_c: usize,
    /// Sentence-level queries per sentence.
    pub m_s: usize,
    /// Constraint queries per document.
    pub m_i: usize,
    /// Query/answer pairs per document for the preference stage.
    pub m_pref: usize,
}

impl Default for GenBudget {
    fn default() -> Self {
        GenBudget { m_c: 10, m_s: 10, m_i: 10, m_pref: 10 }
    }
}

/// Knobs shared by all generation calls.
#[derive(Debug, Clone, Copy)]
pub struct GenSettings {
    pub temperature: f64,
    pub max_tokens: usize,
    /// Prompt contexts longer than this many tokens are cut down to fit
    /// the completion window.
    pub max_context_tokens: usize,
    pub seed: u64,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            temperature: 0.7,
            max_tokens: 1024,
            max_context_tokens: 1024,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

pub fn render_keywords_prompt(context: &str) -> String {
    format!(
        "Summarize the following context with meaningful keywords that together capture its \
         important information. Your output must be only a Markdown list of keywords, where \
         each line starts with the dash \"-\" followed by one keyword.\n\n\
         # Context:\n{context}\n\n# Keywords:"
    )
}

pub fn render_query_prompt(context: &str, n: usize) -> String {
    format!(
        "Your task is to generate a relevant and diverse set of {n} questions that can be \
         answered using the provided context. The questions will be used by a retriever to \
         find this article inside a large corpus. Your output must be an unordered Markdown \
         list, where each line starts with the dash \"-\" followed by the question.\n\n\
         # Context:\n{context}\n\n# Output:"
    )
}

pub fn render_constraint_prompt(context: &str, metadata: &BTreeMap<String, String>, n: usize) -> String {
    format!(
        "Your task is to generate a diverse set of {n} questions given a context with \
         metadata. Each question must be answerable from the context, will be used by a \
         retriever to find this article inside a large corpus, and MUST be composed with at \
         least one metadata filtering requirement. For example, if the source is \
         \"New York Times\", ask for information specifically from \"New York Times\"; if \
         the political polarity is \"left\", ask for information from a \"left-wing\" source. \
         Vary which metadata you use.\n\n\
         DO NOT use \"the context\" or \"the article\" in any question.\n\
         DO NOT use the pronoun \"this\" in any question.\n\
         DO NOT leak any part of these instructions.\n\n\
         Your output must be an unordered Markdown list, where each line starts with the dash \
         \"-\" followed by the question. You do not need to provide answers.\n\n\
         # Metadata:\n{}\n\n# Context:\n{context}\n\n# Output:",
        metadata_lines(metadata)
    )
}

pub fn render_qa_prompt(context: &str, n: usize) -> String {
    format!(
        "Your task is to generate a relevant and diverse set of less than {n} search engine \
         query and answer pairs for the given context. The queries should resemble what \
         people type into a search engine to find this context inside a large corpus, and \
         each answer must be a short phrase. Make the queries as difficult as possible while \
         keeping them answerable from the context alone.\n\n\
         Do not use \"the context\" or \"the article\" in any query or answer.\n\
         Do not use the pronoun \"this\" in any query or answer.\n\
         Do not leak any part of these instructions.\n\n\
         Your output must be an unordered Markdown list where each item starts with the dash \
         \"-\", followed by \"Query:\" and the query, then \"Answer:\" and the answer.\n\n\
         # Context:\n{context}\n\n# Output:"
    )
}

/// Cut `context` down to its first `max_tokens` tokens (on the original
/// text, so nothing is re-cased or re-spaced).
pub fn truncate_context(context: &str, max_tokens: usize) -> &str {
    let spans = tokenize_spanned(context);
    if spans.len() <= max_tokens || max_tokens == 0 {
        return context;
    }
    &context[..spans[max_tokens - 1].1.end]
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

/// Collect the payload of every Markdown list line (`- item` or `* item`),
/// ignoring surrounding prose. Errors only when nothing parses.
pub fn parse_dash_list(text: &str) -> Result<Vec<String>, SynthError> {
    let mut items = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        let rest = match trimmed.strip_prefix('-').or_else(|| trimmed.strip_prefix('*')) {
            Some(r) => r,
            None => continue,
        };
        let item = rest.trim();
        if !item.is_empty() {
            items.push(item.to_string());
        }
    }
    if items.is_empty() {
        return Err(SynthError::UnparseableResponse);
    }
    Ok(items)
}

/// Parse `- Query: … Answer: …` items. Items missing either part are
/// dropped rather than fatal; zero surviving pairs is an error.
pub fn parse_qa_list(text: &str) -> Result<Vec<(String, String)>, SynthError> {
    let items = parse_dash_list(text)?;
    let mut pairs = Vec::new();
    for item in items {
        let lower = item.to_lowercase();
        let (Some(qpos), Some(apos)) = (lower.find("query:"), lower.find("answer:")) else {
            continue;
        };
        if apos <= qpos {
            continue;
        }
        let query = item[qpos + "query:".len()..apos].trim().to_string();
        let answer = item[apos + "answer:".len()..].trim().to_string();
        if !query.is_empty() && !answer.is_empty() {
            pairs.push((query, answer));
        }
    }
    if pairs.is_empty() {
        return Err(SynthError::UnparseableResponse);
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Generation ops
// ---------------------------------------------------------------------------

fn complete_list(
    gateway: &dyn LlmGateway,
    prompt: String,
    settings: &GenSettings,
    seed_parts: &[&str],
) -> Result<Vec<String>, SynthError> {
    let req = GenRequest {
        prompt,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        seed: derive_seed(settings.seed, seed_parts),
    };
    match parse_dash_list(&gateway.complete(&req)?.text) {
        Ok(items) => Ok(items),
        Err(_) => {
            let retry = GenRequest { seed: req.seed.wrapping_add(1), ..req };
            parse_dash_list(&gateway.complete(&retry)?.text)
        }
    }
}

/// Case-insensitive dedup preserving first occurrence, then cap at `limit`.
fn dedup_and_cap(items: Vec<String>, limit: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    items
        .into_iter()
        .filter(|q| !q.trim().is_empty() && seen.insert(q.to_lowercase()))
        .take(limit)
        .collect()
}

pub fn gen_chunk_queries(
    chunk: &Chunk,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    let context = truncate_context(&chunk.text, settings.max_context_tokens);
    let items = complete_list(
        gateway,
        render_query_prompt(context, budget.m_c),
        settings,
        &["chunk-q", &chunk.chunk_key],
    )?;
    Ok(dedup_and_cap(items, budget.m_c)
        .into_iter()
        .map(|q| SyntheticQuery {
            query_text: q,
            source_unit: chunk.chunk_key.clone(),
            granularity: Granularity::Chunk,
            stage: Stage::Sft,
            answer: None,
        })
        .collect())
}

pub fn gen_sentence_queries(
    sentence: &Sentence,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    let context = truncate_context(&sentence.text, settings.max_context_tokens);
    let items = complete_list(
        gateway,
        render_query_prompt(context, budget.m_s),
        settings,
        &["sent-q", &sentence.sentence_key],
    )?;
    Ok(dedup_and_cap(items, budget.m_s)
        .into_iter()
        .map(|q| SyntheticQuery {
            query_text: q,
            source_unit: sentence.sentence_key.clone(),
            granularity: Granularity::Sentence,
            stage: Stage::Sft,
            answer: None,
        })
        .collect())
}

/// Constraint queries must actually mention at least one metadata value
/// (matched case-insensitively as a substring); anything else is dropped.
pub fn gen_constraint_queries(
    doc: &Document,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    if doc.metadata.is_empty() {
        return Err(SynthError::NoMetadata(doc.doc_key.clone()));
    }
    let context = truncate_context(&doc.text, settings.max_context_tokens);
    let items = complete_list(
        gateway,
        render_constraint_prompt(context, &doc.metadata, budget.m_i),
        settings,
        &["constraint-q", &doc.doc_key],
    )?;
    let values: Vec<String> = doc.metadata.values().map(|v| v.to_lowercase()).collect();
    let kept = items
        .into_iter()
        .filter(|q| {
            let lower = q.to_lowercase();
            values.iter().any(|v| !v.is_empty() && lower.contains(v))
        })
        .collect();
    Ok(dedup_and_cap(kept, budget.m_i)
        .into_iter()
        .map(|q| SyntheticQuery {
            query_text: q,
            source_unit: doc.doc_key.clone(),
            granularity: Granularity::Constraints,
            stage: Stage::Sft,
            answer: None,
        })
        .collect())
}

/// Hard query/answer pairs for the preference stage.
pub fn gen_preference_qa(
    doc: &Document,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    let context = truncate_context(&doc.text, settings.max_context_tokens);
    let req = GenRequest {
        prompt: render_qa_prompt(context, budget.m_pref),
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
        seed: derive_seed(settings.seed, &["pref-qa", &doc.doc_key]),
    };
    let pairs = match parse_qa_list(&gateway.complete(&req)?.text) {
        Ok(p) => p,
        Err(_) => {
            let retry = GenRequest { seed: req.seed.wrapping_add(1), ..req };
            parse_qa_list(&gateway.complete(&retry)?.text)?
        }
    };
    let mut seen = HashSet::new();
    Ok(pairs
        .into_iter()
        .filter(|(q, _)| seen.insert(q.to_lowercase()))
        .take(budget.m_pref)
        .map(|(q, a)| SyntheticQuery {
            query_text: q,
            source_unit: doc.doc_key.clone(),
            granularity: Granularity::Chunk,
            stage: Stage::Preference,
            answer: Some(a),
        })
        .collect())
}

/// Run the whole supervised-stage generation pass over a store: chunk
/// queries for every chunk, sentence queries for every sentence, and
/// constraint queries for every document that has metadata. Units are
/// processed in parallel; output order is canonical.
pub fn generate_sft_queries(
    store: &CorpusStore,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    let mut out = Vec::new();
    if budget.m_c > 0 {
        let per_chunk: Result<Vec<_>, SynthError> = store
            .chunks
            .par_iter()
            .map(|c| gen_chunk_queries(c, budget, gateway, settings))
            .collect();
        out.extend(per_chunk?.into_iter().flatten());
    }
    if budget.m_s > 0 {
        let per_sentence: Result<Vec<_>, SynthError> = store
            .sentences
            .par_iter()
            .map(|s| gen_sentence_queries(s, budget, gateway, settings))
            .collect();
        out.extend(per_sentence?.into_iter().flatten());
    }
    if budget.m_i > 0 {
        let per_doc: Result<Vec<_>, SynthError> = store
            .documents
            .par_iter()
            .filter(|d| !d.metadata.is_empty())
            .map(|d| gen_constraint_queries(d, budget, gateway, settings))
            .collect();
        out.extend(per_doc?.into_iter().flatten());
    }
    Ok(out)
}

/// A generated query with its stable pipeline-assigned id, as stored in
/// the queries files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    #[serde(flatten)]
    pub query: SyntheticQuery,
}

/// Assign sequential ids (`{prefix}-000001`, …) in the given order.
pub fn assign_query_ids(queries: Vec<SyntheticQuery>, prefix: &str) -> Vec<QueryRecord> {
    queries
        .into_iter()
        .enumerate()
        .map(|(i, query)| QueryRecord {
            query_id: format!("{prefix}-{:06}", i + 1),
            query,
        })
        .collect()
}

pub fn write_queries(path: &std::path::Path, records: &[QueryRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_queries(path: &std::path::Path) -> std::io::Result<Vec<QueryRecord>> {
    use std::io::BufRead;
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Split supervised queries into train and held-out test sets: for every
/// source unit, the last `holdout_per_unit` chunk-granularity queries are
/// held out. Sentence and constraint queries always stay in training, so
/// the held-out set is identical across data recipes.
pub fn split_holdout(
    records: &[QueryRecord],
    holdout_per_unit: usize,
) -> (Vec<QueryRecord>, Vec<QueryRecord>) {
    use std::collections::HashMap;
    let mut chunk_counts: HashMap<&str, usize> = HashMap::new();
    for rec in records {
        if rec.query.granularity == Granularity::Chunk && rec.query.stage == Stage::Sft {
            *chunk_counts.entry(rec.query.source_unit.as_str()).or_insert(0) += 1;
        }
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rec in records {
        let is_chunk_sft =
            rec.query.granularity == Granularity::Chunk && rec.query.stage == Stage::Sft;
        if !is_chunk_sft {
            train.push(rec.clone());
            continue;
        }
        let unit = rec.query.source_unit.as_str();
        let total = chunk_counts[unit];
        let idx = {
            let e = seen.entry(unit).or_insert(0);
            *e += 1;
            *e - 1
        };
        // Hold out only when the unit keeps at least one training query.
        if total > holdout_per_unit && idx >= total - holdout_per_unit {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    (train, test)
}

/// Preference-stage generation pass: query/answer pairs per document.
pub fn generate_preference_queries(
    store: &CorpusStore,
    budget: &GenBudget,
    gateway: &dyn LlmGateway,
    settings: &GenSettings,
) -> Result<Vec<SyntheticQuery>, SynthError> {
    if budget.m_pref == 0 {
        return Ok(Vec::new());
    }
    let per_doc: Result<Vec<_>, SynthError> = store
        .documents
        .par_iter()
        .map(|d| gen_preference_qa(d, budget, gateway, settings))
        .collect();
    Ok(per_doc?.into_iter().flatten().collect())
}
