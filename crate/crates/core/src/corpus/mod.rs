//! Corpus ingestion: documents with metadata, fixed-size token chunks,
//! sentences, and the vocabulary derived from all of it.
//!
//! The store is built once by [`ingest`] and is immutable afterwards
//! (the vocabulary alone may grow later when identifiers are assigned).

mod sentences;
mod store;
mod tokenizer;

pub use sentences::split_sentences;
pub use store::{load_store, save_store, DOCUMENTS_FILE, CHUNKS_FILE, SENTENCES_FILE, VOCAB_FILE};
pub use tokenizer::{tokenize, tokenize_spanned, Vocabulary, BOS, EOI, UNK};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("duplicate document key: {0}")]
    DuplicateKey(String),
    #[error("document {0} has empty text")]
    EmptyText(String),
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("malformed line {line} in {file}")]
    Malformed { file: String, line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One raw input record, as read from the corpus JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_key: String,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_key: String,
    pub text: String,
    pub metadata: BTreeMap<String, String>,
}

/// A contiguous token range of one document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_key: String,
    pub parent: String,
    /// Half-open `[start, end)` index range into the parent's token sequence.
    pub token_span: (usize, usize),
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_key: String,
    pub parent: String,
    pub text: String,
}

/// Immutable corpus: documents, their chunks and sentences, and the
/// vocabulary covering document text and metadata values.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    pub documents: Vec<Document>,
    pub chunks: Vec<Chunk>,
    pub sentences: Vec<Sentence>,
    pub vocab: Vocabulary,
    doc_index: HashMap<String, usize>,
    chunk_index: HashMap<String, usize>,
    sentence_index: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn document(&self, key: &str) -> Option<&Document> {
        self.doc_index.get(key).map(|&i| &self.documents[i])
    }

    pub fn chunk(&self, key: &str) -> Option<&Chunk> {
        self.chunk_index.get(key).map(|&i| &self.chunks[i])
    }

    pub fn sentence(&self, key: &str) -> Option<&Sentence> {
        self.sentence_index.get(key).map(|&i| &self.sentences[i])
    }

    /// Chunks of one document, in document order.
    pub fn chunks_of<'a>(&'a self, doc_key: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| c.parent == doc_key)
    }

    /// Sentences of one chunk, in order.
    pub fn sentences_of<'a>(&'a self, chunk_key: &'a str) -> impl Iterator<Item = &'a Sentence> + 'a {
        self.sentences.iter().filter(move |s| s.parent == chunk_key)
    }

    fn rebuild_indexes(&mut self) {
        self.doc_index = self
            .documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_key.clone(), i))
            .collect();
        self.chunk_index = self
            .chunks
            .iter()
            .enumerate()
            .map(|(i, c)| (c.chunk_key.clone(), i))
            .collect();
        self.sentence_index = self
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sentence_key.clone(), i))
            .collect();
    }
}

/// Split a document into chunks of at most `max_chunk_tokens` tokens,
/// non-overlapping and covering the whole token sequence. Chunk text is the
/// original substring spanned by the chunk's tokens, so casing and spacing
/// survive for sentence splitting.
pub fn chunk_document(doc: &Document, max_chunk_tokens: usize) -> Vec<Chunk> {
    assert!(max_chunk_tokens >= 1, "max_chunk_tokens must be >= 1");
    let spanned = tokenize_spanned(&doc.text);
    if spanned.is_empty() {
        return Vec::new();
    }
    let mut chunks = Vec::new();
    let mut start = 0usize;
    while start < spanned.len() {
        let end = (start + max_chunk_tokens).min(spanned.len());
        let byte_start = spanned[start].1.start;
        let byte_end = spanned[end - 1].1.end;
        chunks.push(Chunk {
            chunk_key: format!("{}#c{:04}", doc.doc_key, chunks.len()),
            parent: doc.doc_key.clone(),
            token_span: (start, end),
            text: doc.text[byte_start..byte_end].to_string(),
        });
        start = end;
    }
    chunks
}

/// Build a [`CorpusStore`] from raw records: validate keys, chunk every
/// document, split chunks into sentences, and accumulate the vocabulary
/// (document tokens first, then metadata value tokens, in encounter order).
pub fn ingest(
    records: impl IntoIterator<Item = DocRecord>,
    max_chunk_tokens: usize,
) -> Result<CorpusStore, CorpusError> {
    let mut store = CorpusStore {
        documents: Vec::new(),
        chunks: Vec::new(),
        sentences: Vec::new(),
        vocab: Vocabulary::new(),
        doc_index: HashMap::new(),
        chunk_index: HashMap::new(),
        sentence_index: HashMap::new(),
    };
    for rec in records {
        if store.doc_index.contains_key(&rec.doc_key) {
            return Err(CorpusError::DuplicateKey(rec.doc_key));
        }
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText(rec.doc_key));
        }
        let doc = Document {
            doc_key: rec.doc_key,
            text: rec.text,
            metadata: rec.metadata,
        };
        store.vocab.encode_interning(&doc.text);
        for value in doc.metadata.values() {
            store.vocab.encode_interning(value);
        }
        for chunk in chunk_document(&doc, max_chunk_tokens) {
            for (i, sent) in split_sentences(&chunk.text).into_iter().enumerate() {
                store.sentences.push(Sentence {
                    sentence_key: format!("{}#s{:04}", chunk.chunk_key, i),
                    parent: chunk.chunk_key.clone(),
                    text: sent,
                });
            }
            store.chunks.push(chunk);
        }
        store.doc_index.insert(doc.doc_key.clone(), store.documents.len());
        store.documents.push(doc);
    }
    store.rebuild_indexes();
    Ok(store)
}
