//! Deterministic word-level tokenizer and the corpus vocabulary.
//!
//! Tokenization is intentionally simple: lowercase, split on Unicode
//! whitespace, and split every non-alphanumeric character into its own
//! single-character token. The vocabulary is built from the corpus itself
//! plus a fixed set of special tokens, and may grow later when identifiers
//! introduce tokens that never appeared in any document.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::CorpusError;

/// Sequence-start token, prepended to every model input.
pub const BOS: u32 = 0;
/// End-of-identifier token terminating every identifier.
pub const EOI: u32 = 1;
/// Fallback id for tokens outside the vocabulary (unseen query words).
pub const UNK: u32 = 2;

const SPECIALS: [&str; 3] = ["<bos>", "<eoi>", "<unk>"];

/// Split `text` into tokens: lowercased alphanumeric runs, plus one token
/// per non-alphanumeric, non-whitespace character.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spanned(text).into_iter().map(|(t, _)| t).collect()
}

/// Like [`tokenize`], returning each token's byte range in the original text.
pub fn tokenize_spanned(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
        } else {
            if let Some(s) = run_start.take() {
                out.push((text[s..i].to_lowercase(), s..i));
            }
            if !ch.is_whitespace() {
                let end = i + ch.len_utf8();
                out.push((text[i..end].to_lowercase(), i..end));
            }
        }
    }
    if let Some(s) = run_start {
        out.push((text[s..].to_lowercase(), s..text.len()));
    }
    out
}

/// Dense token-string ↔ id table. Ids are assigned in first-seen order
/// after the special tokens and never change once assigned.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.intern(s);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Return the id for `token`, inserting it if missing.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// Tokenize `text` and map every token to its id (unknowns become UNK).
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Tokenize `text`, interning any unseen token.
    pub fn encode_interning(&mut self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.intern(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or("<bad>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn tsv_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            buf.extend_from_slice(tok.as_bytes());
            buf.push(b'\t');
            buf.extend_from_slice(id.to_string().as_bytes());
            buf.push(b'\n');
        }
        buf
    }

    /// SHA-256 over the canonical TSV serialization; used to pin model
    /// checkpoints to the vocabulary they were trained with.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.tsv_bytes()))
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), CorpusError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.tsv_bytes())?;
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(path)?;
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
                file: path.display().to_string(),
                line: lineno + 1,
            })?;
            let id: u32 = id.parse().map_err(|_| CorpusError::Malformed {
                file: path.display().to_string(),
                line: lineno + 1,
            })?;
            if id as usize != tokens.len() {
                return Err(CorpusError::Malformed {
                    file: path.display().to_string(),
                    line: lineno + 1,
                });
            }
            index.insert(tok.to_string(), id);
            tokens.push(tok.to_string());
        }
        Ok(Vocabulary { tokens, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_into_single_tokens() {
        assert_eq!(tokenize("U.S. yards (1,252)"), vec!["u", ".", "s", ".", "yards", "(", "1", ",", "252", ")"]);
    }

    #[test]
    fn lowercases_and_splits_on_whitespace() {
        assert_eq!(tokenize("The  Cat\tsat"), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn empty_and_whitespace_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t ").is_empty());
    }

    #[test]
    fn spans_point_into_original_text() {
        let text = "Big, News";
        for (tok, span) in tokenize_spanned(text) {
            assert_eq!(text[span].to_lowercase(), tok);
        }
    }

    #[test]
    fn specials_take_first_three_ids() {
        let v = Vocabulary::new();
        assert_eq!(v.lookup("<bos>"), Some(BOS));
        assert_eq!(v.lookup("<eoi>"), Some(EOI));
        assert_eq!(v.lookup("<unk>"), Some(UNK));
    }

    #[test]
    fn intern_is_idempotent_and_dense() {
        let mut v = Vocabulary::new();
        let a = v.intern("alpha");
        let b = v.intern("beta");
        assert_eq!(v.intern("alpha"), a);
        assert_eq!(b, a + 1);
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn unknown_tokens_encode_to_unk() {
        let mut v = Vocabulary::new();
        v.intern("alpha");
        assert_eq!(v.encode("alpha omega"), vec![3, UNK]);
    }

    #[test]
    fn tsv_round_trip_preserves_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut v = Vocabulary::new();
        v.encode_interning("the cat sat on the mat.");
        let path = dir.path().join("vocab.tsv");
        v.write_tsv(&path).unwrap();
        let loaded = Vocabulary::read_tsv(&path).unwrap();
        assert_eq!(loaded.len(), v.len());
        assert_eq!(loaded.content_hash(), v.content_hash());
        assert_eq!(loaded.lookup("cat"), v.lookup("cat"));
    }
}
