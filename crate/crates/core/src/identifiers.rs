//! Identifier assignment and the prefix tree that constrains decoding.
//!
//! Each retrieval unit (a chunk or a whole document, per configuration)
//! gets a unique token sequence terminated by the end-of-identifier token:
//! either a keyword list produced through the gateway, or a single fresh
//! vocabulary token ("atomic"). All identifiers are then loaded into an
//! [`IdTrie`] so beam search can only ever emit valid identifiers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, Vocabulary, EOI};
use crate::gateway::{GatewayError, GenRequest, LlmGateway};
use crate::seeding::derive_seed;
use crate::synthgen::{parse_dash_list, render_keywords_prompt, SynthError};

#[derive(Debug, Error)]
pub enum IdError {
    #[error("duplicate identifier token sequence for units {0} and {1}")]
    DuplicateIdentifier(String, String),
    #[error("prefix is not reachable in the trie")]
    InvalidPrefix,
    #[error("identifier for {0} is malformed (EOI must terminate it, exactly once)")]
    MalformedIdentifier(String),
    #[error("no identifier registered for unit {0}")]
    UnknownUnit(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed line {line} in {file}")]
    Malformed { file: String, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdKind {
    Semantic,
    Atomic,
}

impl std::fmt::Display for IdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IdKind::Semantic => write!(f, "semantic"),
            IdKind::Atomic => write!(f, "atomic"),
        }
    }
}

/// Which corpus granularity identifiers are assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdLevel {
    Chunk,
    Document,
}

/// A unit's identifier: vocabulary token ids ending in EOI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identifier {
    pub unit_key: String,
    pub tokens: Vec<u32>,
    pub kind: IdKind,
}

impl Identifier {
    fn validate(&self) -> Result<(), IdError> {
        let eoi_count = self.tokens.iter().filter(|&&t| t == EOI).count();
        if eoi_count != 1 || *self.tokens.last().unwrap_or(&0) != EOI || self.tokens.len() < 2 {
            return Err(IdError::MalformedIdentifier(self.unit_key.clone()));
        }
        if self.kind == IdKind::Atomic && self.tokens.len() != 2 {
            return Err(IdError::MalformedIdentifier(self.unit_key.clone()));
        }
        Ok(())
    }
}

/// All identifiers of a corpus, with unit-key lookup and the provenance
/// chain used to resolve a query's source unit to its retrieval unit.
#[derive(Debug, Clone)]
pub struct IdTable {
    pub kind: IdKind,
    pub level: IdLevel,
    ids: Vec<Identifier>,
    by_unit: HashMap<String, usize>,
}

impl IdTable {
    pub fn new(kind: IdKind, level: IdLevel, ids: Vec<Identifier>) -> Self {
        let by_unit = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.unit_key.clone(), i))
            .collect();
        IdTable { kind, level, ids, by_unit }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Identifier> {
        self.ids.iter()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, unit_key: &str) -> Option<&Identifier> {
        self.by_unit.get(unit_key).map(|&i| &self.ids[i])
    }

    /// Map any corpus key (sentence, chunk, or document) to the retrieval
    /// unit carrying an identifier. Sentences resolve through their chunk;
    /// at chunk level a document resolves to its first chunk, at document
    /// level a chunk resolves to its parent.
    pub fn resolve_unit(&self, store: &CorpusStore, source_key: &str) -> Result<String, IdError> {
        if self.by_unit.contains_key(source_key) {
            return Ok(source_key.to_string());
        }
        if let Some(sent) = store.sentence(source_key) {
            return self.resolve_unit(store, &sent.parent);
        }
        if let Some(chunk) = store.chunk(source_key) {
            return match self.level {
                IdLevel::Chunk => Err(IdError::UnknownUnit(source_key.to_string())),
                IdLevel::Document => self.resolve_unit(store, &chunk.parent),
            };
        }
        if let Some(doc) = store.document(source_key) {
            return match self.level {
                IdLevel::Document => Err(IdError::UnknownUnit(source_key.to_string())),
                IdLevel::Chunk => store
                    .chunks_of(&doc.doc_key)
                    .next()
                    .map(|c| c.chunk_key.clone())
                    .ok_or_else(|| IdError::UnknownUnit(source_key.to_string())),
            };
        }
        Err(IdError::UnknownUnit(source_key.to_string()))
    }

    pub fn write_tsv(&self, path: &Path) -> Result<(), IdError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for id in &self.ids {
            let toks = id
                .tokens
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(f, "{}\t{}\t{}", id.unit_key, id.kind, toks)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &Path, level: IdLevel) -> Result<Self, IdError> {
        let f = std::fs::File::open(path)?;
        let mut ids = Vec::new();
        let mut kind = IdKind::Semantic;
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let bad = || IdError::Malformed {
                file: path.display().to_string(),
                line: lineno + 1,
            };
            let unit_key = parts.next().ok_or_else(bad)?.to_string();
            let kind_s = parts.next().ok_or_else(bad)?;
            kind = match kind_s {
                "semantic" => IdKind::Semantic,
                "atomic" => IdKind::Atomic,
                _ => return Err(bad()),
            };
            let tokens = parts
                .next()
                .ok_or_else(bad)?
                .split(' ')
                .map(|t| t.parse::<u32>().map_err(|_| bad()))
                .collect::<Result<Vec<_>, _>>()?;
            ids.push(Identifier { unit_key, tokens, kind });
        }
        Ok(IdTable::new(kind, level, ids))
    }
}

/// Retrieval unit keys of a store at the given level, in corpus order.
pub fn unit_keys(store: &CorpusStore, level: IdLevel) -> Vec<String> {
    match level {
        IdLevel::Chunk => store.chunks.iter().map(|c| c.chunk_key.clone()).collect(),
        IdLevel::Document => store.documents.iter().map(|d| d.doc_key.clone()).collect(),
    }
}

fn unit_text(store: &CorpusStore, level: IdLevel, key: &str) -> String {
    match level {
        IdLevel::Chunk => store.chunk(key).map(|c| c.text.clone()).unwrap_or_default(),
        IdLevel::Document => store.document(key).map(|d| d.text.clone()).unwrap_or_default(),
    }
}

/// Ask the gateway for keywords per unit and build semantic identifiers.
/// The keyword list is serialized as `kw1 ; kw2 ; …` followed by EOI; later
/// collisions get a `# n` suffix so every identifier stays unique. Keyword
/// requests run at temperature 0. New tokens are interned into `vocab`.
pub fn gen_semantic_ids(
    store: &CorpusStore,
    level: IdLevel,
    gateway: &dyn LlmGateway,
    vocab: &mut Vocabulary,
    seed: u64,
) -> Result<IdTable, IdError> {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    let mut owner: HashMap<Vec<u32>, String> = HashMap::new();
    let mut ids = Vec::new();
    for key in unit_keys(store, level) {
        let text = unit_text(store, level, &key);
        let req = GenRequest {
            prompt: render_keywords_prompt(&text),
            temperature: 0.0,
            max_tokens: 256,
            seed: derive_seed(seed, &["ids", &key]),
        };
        let keywords = match parse_dash_list(&gateway.complete(&req)?.text) {
            Ok(kws) => kws,
            Err(_) => {
                // One retry for an unparseable completion, then give up.
                let retry = GenRequest { seed: req.seed.wrapping_add(1), ..req.clone() };
                parse_dash_list(&gateway.complete(&retry)?.text)?
            }
        };
        let joined = keywords.join(" ; ");
        let mut tokens = vocab.encode_interning(&joined);
        let mut n = 2usize;
        while seen.contains(&tokens) {
            let suffixed = format!("{joined} # {n}");
            tokens = vocab.encode_interning(&suffixed);
            n += 1;
        }
        seen.insert(tokens.clone());
        owner.insert(tokens.clone(), key.clone());
        tokens.push(EOI);
        let id = Identifier { unit_key: key, tokens, kind: IdKind::Semantic };
        id.validate()?;
        ids.push(id);
    }
    Ok(IdTable::new(IdKind::Semantic, level, ids))
}

/// Assign one fresh vocabulary token per unit, in unit-key order. Rerunning
/// on the same store yields the same assignment.
pub fn gen_atomic_ids(
    store: &CorpusStore,
    level: IdLevel,
    vocab: &mut Vocabulary,
) -> Result<IdTable, IdError> {
    let mut keys = unit_keys(store, level);
    keys.sort();
    let mut ids = Vec::new();
    for key in keys {
        let token = vocab.intern(&format!("<id:{key}>"));
        let id = Identifier {
            unit_key: key,
            tokens: vec![token, EOI],
            kind: IdKind::Atomic,
        };
        id.validate()?;
        ids.push(id);
    }
    Ok(IdTable::new(IdKind::Atomic, level, ids))
}

// ---------------------------------------------------------------------------
// Trie
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct TrieNode {
    children: BTreeMap<u32, usize>,
    terminal: Option<String>,
}

/// What may follow a reachable prefix.
#[derive(Debug, PartialEq, Eq)]
pub enum NextTokens<'a> {
    /// The prefix is a complete identifier of this unit.
    Terminal(&'a str),
    /// Sorted, non-empty set of admissible next tokens.
    Allowed(Vec<u32>),
}

/// Prefix tree over all identifiers. EOI termination makes the identifier
/// set prefix-free, so every terminal is a leaf.
#[derive(Debug)]
pub struct IdTrie {
    nodes: Vec<TrieNode>,
    len: usize,
    max_depth: usize,
}

impl IdTrie {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Longest identifier length, in tokens (including EOI).
    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    fn walk(&self, prefix: &[u32]) -> Option<usize> {
        let mut node = 0usize;
        for tok in prefix {
            node = *self.nodes[node].children.get(tok)?;
        }
        Some(node)
    }

    /// Whether `tokens` is exactly one of the stored identifiers.
    pub fn contains(&self, tokens: &[u32]) -> bool {
        self.walk(tokens)
            .map(|n| self.nodes[n].terminal.is_some())
            .unwrap_or(false)
    }

    /// Enumerate `(tokens, unit_key)` for every stored identifier, in
    /// depth-first (lexicographic) order.
    pub fn enumerate(&self) -> Vec<(Vec<u32>, String)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if let Some(unit) = &self.nodes[node].terminal {
                out.push((prefix.clone(), unit.clone()));
            }
            // Reverse order so the stack pops lexicographically.
            for (&tok, &child) in self.nodes[node].children.iter().rev() {
                let mut p = prefix.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out
    }
}

/// Build the decoding trie from unique identifiers.
pub fn build_trie(ids: &IdTable) -> Result<IdTrie, IdError> {
    let mut trie = IdTrie {
        nodes: vec![TrieNode::default()],
        len: 0,
        max_depth: 0,
    };
    for id in ids.iter() {
        id.validate()?;
        let mut node = 0usize;
        for &tok in &id.tokens {
            let next = match trie.nodes[node].children.get(&tok) {
                Some(&n) => n,
                None => {
                    trie.nodes.push(TrieNode::default());
                    let n = trie.nodes.len() - 1;
                    trie.nodes[node].children.insert(tok, n);
                    n
                }
            };
            node = next;
        }
        if let Some(existing) = &trie.nodes[node].terminal {
            return Err(IdError::DuplicateIdentifier(existing.clone(), id.unit_key.clone()));
        }
        trie.nodes[node].terminal = Some(id.unit_key.clone());
        trie.len += 1;
        trie.max_depth = trie.max_depth.max(id.tokens.len());
    }
    Ok(trie)
}

/// Tokens admissible after `prefix`, or the terminal signal when the prefix
/// is a complete identifier.
pub fn allowed_next<'a>(trie: &'a IdTrie, prefix: &[u32]) -> Result<NextTokens<'a>, IdError> {
    let node = trie.walk(prefix).ok_or(IdError::InvalidPrefix)?;
    if let Some(unit) = &trie.nodes[node].terminal {
        return Ok(NextTokens::Terminal(unit));
    }
    Ok(NextTokens::Allowed(trie.nodes[node].children.keys().copied().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest, DocRecord};
    use crate::gateway::ScriptedGateway;
    use proptest::prelude::*;
    use std::collections::BTreeMap as Map;

    fn ident(unit: &str, toks: &[u32]) -> Identifier {
        Identifier {
            unit_key: unit.to_string(),
            tokens: toks.to_vec(),
            kind: IdKind::Semantic,
        }
    }

    fn table(ids: Vec<Identifier>) -> IdTable {
        IdTable::new(IdKind::Semantic, IdLevel::Chunk, ids)
    }

    fn tiny_store() -> CorpusStore {
        let recs = (0..2).map(|i| DocRecord {
            doc_key: format!("doc-{i:04}"),
            text: format!("Alpha beta gamma delta number {i}. Epsilon zeta follows."),
            metadata: Map::from([("source".into(), "Outlet".into())]),
        });
        ingest(recs, 256).unwrap()
    }

    #[test]
    fn semantic_ids_from_stubbed_keywords() {
        let store = tiny_store();
        let mut vocab = store.vocab.clone();
        let gw = ScriptedGateway::new(vec!["- alpha\n- beta", "- gamma\n- delta"]);
        let ids = gen_semantic_ids(&store, IdLevel::Chunk, &gw, &mut vocab, 0).unwrap();
        assert_eq!(ids.len(), 2);
        let first = ids.get("doc-0000#c0000").unwrap();
        let text = first.tokens[..first.tokens.len() - 1]
            .iter()
            .map(|&t| vocab.token(t).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(text, "alpha ; beta");
        assert_eq!(*first.tokens.last().unwrap(), EOI);
    }

    #[test]
    fn identical_keyword_lists_get_numbered_suffix() {
        let store = tiny_store();
        let mut vocab = store.vocab.clone();
        let gw = ScriptedGateway::new(vec!["- alpha\n- beta", "- alpha\n- beta"]);
        let ids = gen_semantic_ids(&store, IdLevel::Chunk, &gw, &mut vocab, 0).unwrap();
        let second = ids.get("doc-0001#c0000").unwrap();
        let text = second.tokens[..second.tokens.len() - 1]
            .iter()
            .map(|&t| vocab.token(t).unwrap())
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(text, "alpha ; beta # 2");
    }

    #[test]
    fn prose_around_the_list_is_ignored() {
        let store = tiny_store();
        let mut vocab = store.vocab.clone();
        let gw = ScriptedGateway::new(vec![
            "Sure! Here are the keywords:\n- alpha\n- beta\nHope that helps.",
            "- gamma",
        ]);
        let ids = gen_semantic_ids(&store, IdLevel::Chunk, &gw, &mut vocab, 0).unwrap();
        let first = ids.get("doc-0000#c0000").unwrap();
        assert_eq!(first.tokens.len(), 4); // alpha ; beta EOI
    }

    #[test]
    fn atomic_ids_extend_vocab_by_exactly_n() {
        let store = tiny_store();
        let mut vocab = store.vocab.clone();
        let before = vocab.len();
        let ids = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(vocab.len(), before + 2);
        for id in ids.iter() {
            assert_eq!(id.tokens.len(), 2);
        }
        // Re-running yields the identical assignment and no vocab growth.
        let again = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        assert_eq!(vocab.len(), before + 2);
        for (a, b) in ids.iter().zip(again.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn trie_allowed_sets_match_construction() {
        let ids = table(vec![ident("u1", &[5, 7, EOI]), ident("u2", &[5, 9, EOI])]);
        let trie = build_trie(&ids).unwrap();
        assert_eq!(allowed_next(&trie, &[5]).unwrap(), NextTokens::Allowed(vec![7, 9]));
        assert_eq!(allowed_next(&trie, &[]).unwrap(), NextTokens::Allowed(vec![5]));
        assert_eq!(allowed_next(&trie, &[5, 7, EOI]).unwrap(), NextTokens::Terminal("u1"));
        assert!(matches!(allowed_next(&trie, &[6]), Err(IdError::InvalidPrefix)));
    }

    #[test]
    fn duplicate_identifier_is_rejected() {
        let ids = table(vec![ident("u1", &[5, EOI]), ident("u2", &[5, EOI])]);
        assert!(matches!(build_trie(&ids), Err(IdError::DuplicateIdentifier(_, _))));
    }

    #[test]
    fn enumeration_returns_the_input_set() {
        let ids = table(vec![
            ident("a", &[3, 4, EOI]),
            ident("b", &[3, EOI]),
            ident("c", &[9, 2, 2, EOI]),
        ]);
        let trie = build_trie(&ids).unwrap();
        let listed = trie.enumerate();
        assert_eq!(listed.len(), 3);
        let set: HashSet<Vec<u32>> = listed.iter().map(|(t, _)| t.clone()).collect();
        for id in ids.iter() {
            assert!(set.contains(&id.tokens));
        }
        assert_eq!(trie.max_depth(), 4);
    }

    #[test]
    fn resolution_follows_provenance() {
        let store = tiny_store();
        let mut vocab = store.vocab.clone();
        let ids = gen_atomic_ids(&store, IdLevel::Chunk, &mut vocab).unwrap();
        let sent_key = store.sentences[0].sentence_key.clone();
        assert_eq!(ids.resolve_unit(&store, &sent_key).unwrap(), store.sentences[0].parent);
        // A document resolves to its first chunk at chunk level.
        assert_eq!(ids.resolve_unit(&store, "doc-0000").unwrap(), "doc-0000#c0000");
        assert!(ids.resolve_unit(&store, "nope").is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ids = table(vec![ident("u1", &[5, 7, EOI]), ident("u2", &[5, 9, EOI])]);
        let path = dir.path().join("identifiers.tsv");
        ids.write_tsv(&path).unwrap();
        let loaded = IdTable::read_tsv(&path, IdLevel::Chunk).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.get("u2").unwrap().tokens, vec![5, 9, EOI]);
    }

    proptest! {
        // Membership through the trie agrees with a linear scan over the
        // identifier list, for random identifier sets and random probes.
        #[test]
        fn trie_membership_matches_linear_scan(
            raw in proptest::collection::vec(proptest::collection::vec(2u32..9, 1..5), 1..20),
            probe in proptest::collection::vec(2u32..9, 0..6),
        ) {
            let mut seen = HashSet::new();
            let ids: Vec<Identifier> = raw
                .into_iter()
                .filter(|body| seen.insert(body.clone()))
                .enumerate()
                .map(|(i, mut body)| {
                    body.push(EOI);
                    ident(&format!("u{i}"), &body)
                })
                .collect();
            let list = ids.clone();
            let trie = build_trie(&table(ids)).unwrap();

            let mut probe_id = probe.clone();
            probe_id.push(EOI);
            let in_list = list.iter().any(|id| id.tokens == probe_id);
            prop_assert_eq!(trie.contains(&probe_id), in_list);

            // Every strict prefix of a stored identifier yields a non-empty
            // allowed set containing the next token.
            for id in &list {
                for cut in 0..id.tokens.len() {
                    match allowed_next(&trie, &id.tokens[..cut]).unwrap() {
                        NextTokens::Allowed(allowed) => prop_assert!(allowed.contains(&id.tokens[cut])),
                        NextTokens::Terminal(_) => prop_assert!(false, "strict prefix cannot be terminal"),
                    }
                }
            }
        }
    }
}
