//! On-disk corpus store: a directory of JSONL files plus the vocabulary TSV.
//! Writing is deterministic, so identical input and config produce a
//! byte-identical store.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Chunk, CorpusError, CorpusStore, Document, Sentence, Vocabulary};

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const SENTENCES_FILE: &str = "sentences.jsonl";
pub const VOCAB_FILE: &str = "vocab.tsv";

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
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

pub fn save_store(store: &CorpusStore, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir)?;
    write_jsonl(&dir.join(DOCUMENTS_FILE), &store.documents)?;
    write_jsonl(&dir.join(CHUNKS_FILE), &store.chunks)?;
    write_jsonl(&dir.join(SENTENCES_FILE), &store.sentences)?;
    store.vocab.write_tsv(&dir.join(VOCAB_FILE))?;
    Ok(())
}

pub fn load_store(dir: &Path) -> Result<CorpusStore, CorpusError> {
    let documents: Vec<Document> = read_jsonl(&dir.join(DOCUMENTS_FILE))?;
    let chunks: Vec<Chunk> = read_jsonl(&dir.join(CHUNKS_FILE))?;
    let sentences: Vec<Sentence> = read_jsonl(&dir.join(SENTENCES_FILE))?;
    let vocab = Vocabulary::read_tsv(&dir.join(VOCAB_FILE))?;
    let mut store = CorpusStore {
        documents,
        chunks,
        sentences,
        vocab,
        doc_index: Default::default(),
        chunk_index: Default::default(),
        sentence_index: Default::default(),
    };
    store.rebuild_indexes();
    Ok(store)
}
