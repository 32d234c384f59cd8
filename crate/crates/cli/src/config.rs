//! Pipeline configuration: one TOML file drives every stage. Defaults are
//! the reference training recipe; desk-scale runs override the expensive
//! knobs (model size, epochs, budgets) in their config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use genret_core::dataset::CombinePolicy;
use genret_core::identifiers::{IdKind, IdLevel};
use genret_core::model::ModelConfig;
use genret_core::preference::{MiningConfig, MiningSource};
use genret_core::synthgen::GenBudget;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsSection,
    pub corpus: CorpusSection,
    pub identifiers: IdentifierSection,
    pub gateway: GatewaySection,
    pub budget: GenBudget,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub sft: SftSection,
    pub rpo: RpoSection,
    pub retrieval: RetrievalSection,
    pub mining: MiningSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsSection::default(),
            corpus: CorpusSection::default(),
            identifiers: IdentifierSection::default(),
            gateway: GatewaySection::default(),
            budget: GenBudget::default(),
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            sft: SftSection::default(),
            rpo: RpoSection::default(),
            retrieval: RetrievalSection::default(),
            mining: MiningSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Input corpus JSONL (doc_key, text, metadata per line).
    pub corpus: PathBuf,
    /// Directory receiving every artifact and manifest.
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { corpus: PathBuf::from("corpus.jsonl"), run_dir: PathBuf::from("run") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub max_chunk_tokens: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { max_chunk_tokens: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierSection {
    pub kind: IdKind,
    pub level: IdLevel,
}

impl Default for IdentifierSection {
    fn default() -> Self {
        IdentifierSection { kind: IdKind::Semantic, level: IdLevel::Chunk }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    /// Use the deterministic offline stub instead of a remote endpoint.
    pub stub: bool,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Prompt contexts are truncated to this many tokens.
    pub max_context_tokens: usize,
    pub max_inflight: usize,
}

impl Default for GatewaySection {
    fn default() -> Self {
        GatewaySection {
            stub: false,
            temperature: 0.7,
            max_tokens: 1024,
            max_context_tokens: 1024,
            max_inflight: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub max_seq_len: usize,
    pub combine: CombinePolicy,
    /// Chunk-level queries per unit reserved as the held-out test set.
    pub holdout_per_unit: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { max_seq_len: 700, combine: CombinePolicy::Interleave, holdout_per_unit: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub context: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { dim: 64, layers: 2, heads: 2, context: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftSection {
    pub lr: f64,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub batch: usize,
}

impl Default for SftSection {
    fn default() -> Self {
        SftSection { lr: 2e-5, epochs: 2, warmup_ratio: 0.1, batch: 256 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpoSection {
    pub beta: f64,
    pub alpha: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for RpoSection {
    fn default() -> Self {
        RpoSection { beta: 0.5, alpha: 1.0, lr: 1e-7, epochs: 1, batch: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub beam: usize,
    /// Entries kept per query in runs files.
    pub k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection { beam: 10, k: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningSection {
    pub k: usize,
    pub source: MiningSource,
}

impl Default for MiningSection {
    fn default() -> Self {
        MiningSection { k: 10, source: MiningSource::ModelTopk }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: &str| Err(CliError::Config(msg.to_string()));
        if self.corpus.max_chunk_tokens == 0 {
            return fail("corpus.max_chunk_tokens must be at least 1");
        }
        if self.gateway.temperature < 0.0 || self.gateway.temperature > 1.0 {
            return fail("gateway.temperature must lie in [0, 1]");
        }
        if self.gateway.max_tokens == 0 {
            return fail("gateway.max_tokens must be at least 1");
        }
        if self.dataset.max_seq_len < 2 {
            return fail("dataset.max_seq_len must be at least 2");
        }
        if self.model.dim == 0 || self.model.heads == 0 || self.model.dim % self.model.heads != 0 {
            return fail("model.dim must be a positive multiple of model.heads");
        }
        if self.model.layers == 0 || self.model.context < 4 {
            return fail("model.layers must be positive and model.context at least 4");
        }
        if self.sft.lr <= 0.0 || self.rpo.lr <= 0.0 {
            return fail("learning rates must be positive");
        }
        if self.sft.epochs == 0 || self.rpo.epochs == 0 {
            return fail("epoch counts must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.sft.warmup_ratio) {
            return fail("sft.warmup_ratio must lie in [0, 1]");
        }
        if self.rpo.beta <= 0.0 {
            return fail("rpo.beta must be positive");
        }
        if self.rpo.alpha < 0.0 {
            return fail("rpo.alpha must be non-negative");
        }
        if self.retrieval.beam == 0 || self.retrieval.k == 0 {
            return fail("retrieval.beam and retrieval.k must be at least 1");
        }
        if self.mining.k == 0 {
            return fail("mining.k must be at least 1");
        }
        Ok(())
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            vocab,
            dim: self.model.dim,
            layers: self.model.layers,
            heads: self.model.heads,
            context: self.model.context,
        }
    }

    /// Examples are cut to fit both the configured cap and the model.
    pub fn effective_max_seq_len(&self) -> usize {
        self.dataset.max_seq_len.min(self.model.context)
    }

    pub fn mining_config(&self) -> MiningConfig {
        MiningConfig { k: self.mining.k, source: self.mining.source }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_recipe() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.corpus.max_chunk_tokens, 256);
        assert_eq!(cfg.budget.m_c, 10);
        assert_eq!(cfg.budget.m_s, 10);
        assert_eq!(cfg.budget.m_i, 10);
        assert_eq!(cfg.budget.m_pref, 10);
        assert_eq!(cfg.gateway.temperature, 0.7);
        assert_eq!(cfg.dataset.max_seq_len, 700);
        assert_eq!(cfg.sft.lr, 2e-5);
        assert_eq!(cfg.sft.epochs, 2);
        assert_eq!(cfg.sft.warmup_ratio, 0.1);
        assert_eq!(cfg.sft.batch, 256);
        assert_eq!(cfg.rpo.lr, 1e-7);
        assert_eq!(cfg.rpo.epochs, 1);
        assert_eq!(cfg.rpo.batch, 64);
        assert_eq!(cfg.rpo.beta, 0.5);
        assert_eq!(cfg.rpo.alpha, 1.0);
        assert_eq!(cfg.retrieval.beam, 10);
        assert_eq!(cfg.retrieval.k, 10);
        assert_eq!(cfg.mining.k, 10);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            "seed = 9\n[sft]\nlr = 1e-3\nepochs = 5\n[gateway]\nstub = true\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sft.lr, 1e-3);
        assert_eq!(cfg.sft.epochs, 5);
        assert_eq!(cfg.sft.batch, 256);
        assert!(cfg.gateway.stub);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        let err = toml::from_str::<PipelineConfig>("nonsense = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.rpo.beta = 0.0;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.model.dim = 63;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.sft.lr = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml();
        let again: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(again.to_toml(), text);
    }
}
