//! Training-set construction: context-to-identifier and
//! query-to-identifier examples, combined by concatenation or by
//! round-robin interleaving that upsamples the smaller stream.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, Vocabulary};
use crate::identifiers::{IdError, IdTable};
use crate::synthgen::{Stage, SyntheticQuery};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no identifier found for unit {0}")]
    MissingIdentifier(String),
    #[error("identifier for {0} does not fit within max_seq_len")]
    TargetTooLong(String),
    #[error("example for {0} has an empty input")]
    EmptyInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<IdError> for DatasetError {
    fn from(e: IdError) -> Self {
        match e {
            IdError::UnknownUnit(u) => DatasetError::MissingIdentifier(u),
            other => DatasetError::MissingIdentifier(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Context2id,
    Query2id,
}

/// One training example: input token ids (a context chunk or a query) and
/// the identifier token ids to decode, EOI included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_tokens: Vec<u32>,
    pub target_tokens: Vec<u32>,
    pub origin: Origin,
    pub unit_key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinePolicy {
    Concat,
    Interleave,
}

fn make_example(
    input_tokens: Vec<u32>,
    target_tokens: Vec<u32>,
    origin: Origin,
    unit_key: &str,
    max_seq_len: usize,
) -> Result<TrainingExample, DatasetError> {
    if target_tokens.len() >= max_seq_len {
        return Err(DatasetError::TargetTooLong(unit_key.to_string()));
    }
    let budget = max_seq_len - target_tokens.len();
    let mut input = input_tokens;
    // Over-long inputs lose their tail; targets are never cut.
    input.truncate(budget);
    if input.is_empty() {
        return Err(DatasetError::EmptyInput(unit_key.to_string()));
    }
    Ok(TrainingExample {
        input_tokens: input,
        target_tokens,
        origin: Origin::Context2id,
        unit_key: unit_key.to_string(),
    }
    .with_origin(origin))
}

impl TrainingExample {
    fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

/// One example per chunk, mapping the chunk's own text to the identifier
/// of its retrieval unit. Under document-level identifiers every chunk of
/// a document maps to that document's identifier.
pub fn build_context2id(
    store: &CorpusStore,
    ids: &IdTable,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<Vec<TrainingExample>, DatasetError> {
    let mut out = Vec::with_capacity(store.chunks.len());
    for chunk in &store.chunks {
        let unit = ids.resolve_unit(store, &chunk.chunk_key)?;
        let id = ids
            .get(&unit)
            .ok_or_else(|| DatasetError::MissingIdentifier(unit.clone()))?;
        out.push(make_example(
            vocab.encode(&chunk.text),
            id.tokens.clone(),
            Origin::Context2id,
            &unit,
            max_seq_len,
        )?);
    }
    Ok(out)
}

/// One example per query, mapping the query text to the identifier of the
/// unit the query was generated from (sentences resolve through their
/// chunk). Only SFT-stage queries belong in supervised training.
pub fn build_query2id(
    queries: &[SyntheticQuery],
    store: &CorpusStore,
    ids: &IdTable,
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<Vec<TrainingExample>, DatasetError> {
    let mut out = Vec::with_capacity(queries.len());
    for q in queries.iter().filter(|q| q.stage == Stage::Sft) {
        let unit = ids.resolve_unit(store, &q.source_unit)?;
        let id = ids
            .get(&unit)
            .ok_or_else(|| DatasetError::MissingIdentifier(unit.clone()))?;
        out.push(make_example(
            vocab.encode(&q.query_text),
            id.tokens.clone(),
            Origin::Query2id,
            &unit,
            max_seq_len,
        )?);
    }
    Ok(out)
}

/// Combine the Context2ID stream `a` with the Query2ID stream `b`.
///
/// `Concat` is plain `a ++ b`. `Interleave` alternates one element from
/// each stream, restarting the shorter stream until the longer one is
/// exhausted, which upsamples the smaller set; the result always has
/// `2 * max(|a|, |b|)` elements.
pub fn combine(
    a: &[TrainingExample],
    b: &[TrainingExample],
    policy: CombinePolicy,
) -> Vec<TrainingExample> {
    match policy {
        CombinePolicy::Concat => a.iter().chain(b.iter()).cloned().collect(),
        CombinePolicy::Interleave => {
            if a.is_empty() || b.is_empty() {
                return a.iter().chain(b.iter()).cloned().collect();
            }
            let rounds = a.len().max(b.len());
            let mut out = Vec::with_capacity(2 * rounds);
            for i in 0..rounds {
                out.push(a[i % a.len()].clone());
                out.push(b[i % b.len()].clone());
            }
            out
        }
    }
}

/// Deterministic Fisher-Yates shuffle of the combined dataset.
pub fn shuffled(mut examples: Vec<TrainingExample>, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    examples.shuffle(&mut rng);
    examples
}

pub fn write_examples(path: &Path, examples: &[TrainingExample]) -> Result<(), DatasetError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path) -> Result<Vec<TrainingExample>, DatasetError> {
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
    use crate::corpus::{ingest, DocRecord, EOI};
    use crate::identifiers::{gen_atomic_ids, IdKind, IdLevel, Identifier};
    use crate::synthgen::Granularity;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn ex(tag: u32, origin: Origin) -> TrainingExample {
        TrainingExample {
            input_tokens: vec![tag],
            target_tokens: vec![tag, EOI],
            origin,
            unit_key: format!("u{tag}"),
        }
    }

    fn multi_chunk_store() -> CorpusStore {
        ingest(
            [DocRecord {
                doc_key: "doc-0000".into(),
                text: (0..30).map(|i| format!("word{i}")).collect::<Vec<_>>().join(" "),
                metadata: BTreeMap::new(),
            }],
            10,
        )
        .unwrap()
    }

    #[test]
    fn doc_level_ids_share_targets_across_chunks() {
        let store = multi_chunk_store();
        let mut vocab = store.vocab.clone();
        let ids = gen_atomic_ids(&store, IdLevel::Document, &mut vocab).unwrap();
        let examples = build_context2id(&store, &ids, &vocab, 700).unwrap();
        assert_eq!(examples.len(), 3);
        assert!(examples.windows(2).all(|w| w[0].target_tokens == w[1].target_tokens));
        assert!(examples.iter().all(|e| e.unit_key == "doc-0000"));
    }

    #[test]
    fn chunk_level_ids_have_distinct_targets() {
        let store = multi_chunk_store();
        let mut vocab = store.vocab.clone();
        let ids = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        let examples = build_context2id(&store, &ids, &vocab, 700).unwrap();
        assert_eq!(examples.len(), 3);
        assert_ne!(examples[0].target_tokens, examples[1].target_tokens);
    }

    #[test]
    fn overlong_input_is_truncated_to_fit() {
        let store = multi_chunk_store();
        let mut vocab = store.vocab.clone();
        let ids = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        let examples = build_context2id(&store, &ids, &vocab, 6).unwrap();
        for e in &examples {
            assert!(e.input_tokens.len() + e.target_tokens.len() <= 6);
            assert_eq!(e.input_tokens.len(), 4); // 6 - (unit token + EOI)
        }
    }

    #[test]
    fn query_examples_resolve_sentences_to_their_chunk() {
        let store = ingest(
            [DocRecord {
                doc_key: "doc-0000".into(),
                text: "First fact stated here. Second fact follows now.".into(),
                metadata: BTreeMap::new(),
            }],
            256,
        )
        .unwrap();
        let mut vocab = store.vocab.clone();
        let ids = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        let queries = vec![
            SyntheticQuery {
                query_text: "what fact was stated?".into(),
                source_unit: store.sentences[0].sentence_key.clone(),
                granularity: Granularity::Sentence,
                stage: Stage::Sft,
                answer: None,
            },
            SyntheticQuery {
                query_text: "ignored preference query".into(),
                source_unit: "doc-0000".into(),
                granularity: Granularity::Chunk,
                stage: Stage::Preference,
                answer: Some("x".into()),
            },
        ];
        let examples = build_query2id(&queries, &store, &ids, &vocab, 700).unwrap();
        assert_eq!(examples.len(), 1);
        assert_eq!(examples[0].unit_key, store.sentences[0].parent);
        assert_eq!(examples[0].origin, Origin::Query2id);
    }

    #[test]
    fn missing_identifier_is_an_error() {
        let store = multi_chunk_store();
        let vocab = store.vocab.clone();
        let ids = IdTable::new(IdKind::Atomic, IdLevel::Chunk, vec![Identifier {
            unit_key: "other".into(),
            tokens: vec![5, EOI],
            kind: IdKind::Atomic,
        }]);
        assert!(matches!(
            build_context2id(&store, &ids, &vocab, 700),
            Err(DatasetError::MissingIdentifier(_))
        ));
    }

    #[test]
    fn concat_appends() {
        let a = vec![ex(1, Origin::Context2id), ex(2, Origin::Context2id)];
        let b = vec![ex(3, Origin::Query2id), ex(4, Origin::Query2id), ex(5, Origin::Query2id)];
        let c = combine(&a, &b, CombinePolicy::Concat);
        let keys: Vec<&str> = c.iter().map(|e| e.unit_key.as_str()).collect();
        assert_eq!(keys, vec!["u1", "u2", "u3", "u4", "u5"]);
    }

    #[test]
    fn interleave_cycles_the_shorter_stream() {
        let a = vec![ex(1, Origin::Context2id), ex(2, Origin::Context2id)];
        let b = vec![
            ex(3, Origin::Query2id),
            ex(4, Origin::Query2id),
            ex(5, Origin::Query2id),
            ex(6, Origin::Query2id),
        ];
        let c = combine(&a, &b, CombinePolicy::Interleave);
        let keys: Vec<&str> = c.iter().map(|e| e.unit_key.as_str()).collect();
        assert_eq!(keys, vec!["u1", "u3", "u2", "u4", "u1", "u5", "u2", "u6"]);
    }

    #[test]
    fn interleave_equal_lengths_is_perfect_alternation() {
        let a = vec![ex(1, Origin::Context2id), ex(2, Origin::Context2id)];
        let b = vec![ex(3, Origin::Query2id), ex(4, Origin::Query2id)];
        let c = combine(&a, &b, CombinePolicy::Interleave);
        let keys: Vec<&str> = c.iter().map(|e| e.unit_key.as_str()).collect();
        assert_eq!(keys, vec!["u1", "u3", "u2", "u4"]);
    }

    #[test]
    fn shuffle_is_deterministic() {
        let data: Vec<TrainingExample> = (0..20).map(|i| ex(i, Origin::Query2id)).collect();
        let a = shuffled(data.clone(), 9);
        let b = shuffled(data.clone(), 9);
        assert_eq!(a, b);
        let c = shuffled(data, 10);
        assert_ne!(a, c);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<TrainingExample> = (0..5).map(|i| ex(i, Origin::Context2id)).collect();
        let path = dir.path().join("train.jsonl");
        write_examples(&path, &data).unwrap();
        assert_eq!(read_examples(&path).unwrap(), data);
    }

    proptest! {
        #[test]
        fn combine_size_laws(na in 0usize..12, nb in 0usize..12) {
            let a: Vec<TrainingExample> = (0..na as u32).map(|i| ex(i, Origin::Context2id)).collect();
            let b: Vec<TrainingExample> = (100..100 + nb as u32).map(|i| ex(i, Origin::Query2id)).collect();
            let concat = combine(&a, &b, CombinePolicy::Concat);
            prop_assert_eq!(concat.len(), na + nb);
            let inter = combine(&a, &b, CombinePolicy::Interleave);
            if na == 0 || nb == 0 {
                prop_assert_eq!(inter.len(), na + nb);
            } else {
                prop_assert_eq!(inter.len(), 2 * na.max(nb));
                // Every element of the longer stream appears exactly once.
                let (longer, tag) = if na >= nb { (&a, Origin::Context2id) } else { (&b, Origin::Query2id) };
                for e in longer.iter() {
                    let count = inter.iter().filter(|x| x.unit_key == e.unit_key && x.origin == tag).count();
                    prop_assert_eq!(count, 1);
                }
            }
        }
    }
}
