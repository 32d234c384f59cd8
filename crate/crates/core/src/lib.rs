//! Generative retrieval at desk scale.
//!
//! The crate covers the full pipeline: corpus ingestion, identifier
//! assignment (keyword or atomic), synthetic query generation through an
//! LLM gateway, training-set construction, a small from-scratch decoder
//! model with supervised and preference objectives, trie-constrained beam
//! search retrieval, hard-negative mining, and an evaluation harness with
//! a BM25 baseline.

pub mod corpus;
pub mod dataset;
pub mod demo;
pub mod eval;
pub mod gateway;
pub mod identifiers;
pub mod model;
pub mod preference;
pub mod retrieval;
pub mod seeding;
pub mod synthgen;

pub use corpus::{Chunk, CorpusStore, DocRecord, Document, Sentence, Vocabulary};
pub use gateway::{GenRequest, GenResponse, LlmGateway, StubGateway};
pub use dataset::{CombinePolicy, Origin, TrainingExample};
pub use identifiers::{IdKind, IdLevel, IdTable, IdTrie, Identifier};
pub use model::{ModelConfig, ModelParams, ReferenceModel, RpoConfig, SftConfig};
pub use preference::{MiningConfig, MiningSource, PreferencePair};
pub use retrieval::{RankedEntry, RankedList};
pub use synthgen::{GenBudget, Granularity, Stage, SyntheticQuery};
