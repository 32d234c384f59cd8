//! The pipeline stages behind each subcommand. Every stage reads its
//! upstream artifacts (with freshness checks), writes its outputs plus a
//! manifest, and snapshots the resolved configuration into the run
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use genret_core::corpus::{ingest, load_store, save_store, CorpusStore, DocRecord, Vocabulary};
use genret_core::dataset::{
    build_context2id, build_query2id, combine, read_examples, shuffled, write_examples,
};
use genret_core::demo::demo_corpus;
use genret_core::eval::{evaluate, format_table, MetricReport, QRels};
use genret_core::gateway::{GenerationLog, HttpGateway, LlmGateway, StubGateway};
use genret_core::identifiers::{
    build_trie, gen_atomic_ids, gen_semantic_ids, IdKind, IdTable,
};
use genret_core::model::{
    load_checkpoint, save_checkpoint, train_rpo, train_sft, ReferenceModel, RpoConfig, SftConfig,
};
use genret_core::preference::{build_pref_dataset, build_rpo_examples, read_pairs, write_pairs};
use genret_core::retrieval::{atomic_rank, batch_retrieve, read_runs, write_runs, RankedList};
use genret_core::seeding::derive_seed;
use genret_core::synthgen::{
    assign_query_ids, generate_preference_queries, generate_sft_queries, read_queries,
    split_holdout, write_queries, GenSettings,
};

use crate::config::PipelineConfig;
use crate::manifest::{hash_bytes, hash_file, require_fresh, write_manifest, Manifest};
use crate::CliError;

pub const STORE_DIR: &str = "store";
pub const VOCAB: &str = "vocab.tsv";
pub const IDENTIFIERS: &str = "identifiers.tsv";
pub const QUERIES_SFT: &str = "queries.jsonl";
pub const QUERIES_PREF: &str = "queries_pref.jsonl";
pub const QUERIES_TEST: &str = "queries_test.jsonl";
pub const TRAIN_SET: &str = "train.jsonl";
pub const QRELS_TEST: &str = "qrels_test.tsv";
pub const SFT_CKPT: &str = "checkpoints/sft.ckpt";
pub const RPO_CKPT: &str = "checkpoints/rpo.ckpt";
pub const RUNS_TEST: &str = "runs_test.jsonl";
pub const RUNS_PREF: &str = "runs_pref.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const GENLOG: &str = "genlog.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

const STORE_FILES: [&str; 4] = [
    "store/documents.jsonl",
    "store/chunks.jsonl",
    "store/sentences.jsonl",
    "store/vocab.tsv",
];

/// Which query set a retrieval pass runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySet {
    Test,
    Pref,
}

impl QuerySet {
    pub fn queries_file(self) -> &'static str {
        match self {
            QuerySet::Test => QUERIES_TEST,
            QuerySet::Pref => QUERIES_PREF,
        }
    }

    pub fn default_runs_file(self) -> &'static str {
        match self {
            QuerySet::Test => RUNS_TEST,
            QuerySet::Pref => RUNS_PREF,
        }
    }
}

struct StageCtx<'a> {
    cfg: &'a PipelineConfig,
    run_dir: PathBuf,
    force: bool,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    counts: BTreeMap<String, u64>,
}

impl<'a> StageCtx<'a> {
    fn new(cfg: &'a PipelineConfig, force: bool) -> Result<Self, CliError> {
        let run_dir = cfg.paths.run_dir.clone();
        fs::create_dir_all(&run_dir).map_err(|e| CliError::Other(e.to_string()))?;
        Ok(StageCtx {
            cfg,
            run_dir,
            force,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            counts: BTreeMap::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    /// Resolve a required input inside the run dir, enforcing freshness.
    fn input(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let path = require_fresh(&self.run_dir, rel, self.force)?;
        self.inputs.insert(rel.to_string(), hash_file(&path)?);
        Ok(path)
    }

    /// Record an input living outside the run dir (the raw corpus).
    fn external_input(&mut self, path: &Path) -> Result<PathBuf, CliError> {
        if !path.exists() {
            return Err(CliError::MissingArtifact(path.to_path_buf()));
        }
        let abs = path
            .canonicalize()
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        self.inputs.insert(abs.display().to_string(), hash_file(&abs)?);
        Ok(abs)
    }

    fn output(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.path(rel);
        self.outputs.insert(rel.to_string(), hash_file(&path)?);
        Ok(())
    }

    fn count(&mut self, name: &str, value: u64) {
        self.counts.insert(name.to_string(), value);
    }

    /// Write the manifest and the resolved-config snapshot.
    fn finish(self, stage: &str) -> Result<(), CliError> {
        let resolved = self.cfg.to_toml();
        fs::write(self.path("config.resolved.toml"), &resolved)
            .map_err(|e| CliError::Other(e.to_string()))?;
        write_manifest(
            &self.run_dir,
            &Manifest {
                stage: stage.to_string(),
                config_hash: hash_bytes(resolved.as_bytes()),
                seed: self.cfg.seed,
                inputs: self.inputs,
                outputs: self.outputs,
                counts: self.counts,
            },
        )
    }
}

fn make_gateway(cfg: &PipelineConfig, run_dir: &Path) -> Result<Box<dyn LlmGateway>, CliError> {
    let log = GenerationLog::open(&run_dir.join(GENLOG))
        .map_err(|e| CliError::Other(e.to_string()))?;
    if cfg.gateway.stub {
        Ok(Box::new(StubGateway::new().with_log(log)))
    } else {
        let gw = HttpGateway::from_env()
            .map_err(|e| CliError::Config(format!("gateway: {e}")))?;
        Ok(Box::new(gw.with_log(log)))
    }
}

fn load_run_store(ctx: &mut StageCtx<'_>) -> Result<CorpusStore, CliError> {
    for rel in STORE_FILES {
        ctx.input(rel)?;
    }
    load_store(&ctx.path(STORE_DIR)).map_err(|e| CliError::Other(e.to_string()))
}

fn load_vocab(ctx: &mut StageCtx<'_>) -> Result<Vocabulary, CliError> {
    let path = ctx.input(VOCAB)?;
    Vocabulary::read_tsv(&path).map_err(|e| CliError::Other(e.to_string()))
}

fn load_ids(ctx: &mut StageCtx<'_>) -> Result<IdTable, CliError> {
    let path = ctx.input(IDENTIFIERS)?;
    IdTable::read_tsv(&path, ctx.cfg.identifiers.level).map_err(|e| CliError::Other(e.to_string()))
}

fn read_corpus_jsonl(path: &Path) -> Result<Vec<DocRecord>, CliError> {
    use std::io::BufRead;
    let f = fs::File::open(path).map_err(|e| CliError::Other(e.to_string()))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::Other(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| {
            CliError::Other(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

pub fn cmd_ingest(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let corpus_path = ctx.external_input(&cfg.paths.corpus)?;
    let records = read_corpus_jsonl(&corpus_path)?;
    let n = records.len();
    let store = ingest(records, cfg.corpus.max_chunk_tokens)
        .map_err(|e| CliError::Other(e.to_string()))?;
    save_store(&store, &ctx.path(STORE_DIR)).map_err(|e| CliError::Other(e.to_string()))?;
    for rel in STORE_FILES {
        ctx.output(rel)?;
    }
    ctx.count("documents", n as u64);
    ctx.count("chunks", store.chunks.len() as u64);
    ctx.count("sentences", store.sentences.len() as u64);
    ctx.count("vocab", store.vocab.len() as u64);
    eprintln!(
        "ingested {} documents -> {} chunks, {} sentences, vocab {}",
        n,
        store.chunks.len(),
        store.sentences.len(),
        store.vocab.len()
    );
    ctx.finish("ingest")
}

pub fn cmd_gen_ids(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let store = load_run_store(&mut ctx)?;
    let mut vocab = store.vocab.clone();
    let ids = match cfg.identifiers.kind {
        IdKind::Semantic => {
            let gateway = make_gateway(cfg, &ctx.run_dir)?;
            gen_semantic_ids(&store, cfg.identifiers.level, gateway.as_ref(), &mut vocab, cfg.seed)
                .map_err(|e| CliError::Other(e.to_string()))?
        }
        IdKind::Atomic => gen_atomic_ids(&store, cfg.identifiers.level, &mut vocab)
            .map_err(|e| CliError::Other(e.to_string()))?,
    };
    // The trie must build cleanly or the identifier set is unusable.
    build_trie(&ids).map_err(|e| CliError::Other(e.to_string()))?;
    ids.write_tsv(&ctx.path(IDENTIFIERS)).map_err(|e| CliError::Other(e.to_string()))?;
    vocab.write_tsv(&ctx.path(VOCAB)).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.output(IDENTIFIERS)?;
    ctx.output(VOCAB)?;
    ctx.count("identifiers", ids.len() as u64);
    ctx.count("vocab", vocab.len() as u64);
    eprintln!("assigned {} {} identifiers (vocab {})", ids.len(), ids.kind, vocab.len());
    ctx.finish("gen-ids")
}

pub fn cmd_gen_queries(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let store = load_run_store(&mut ctx)?;
    let gateway = make_gateway(cfg, &ctx.run_dir)?;
    let settings = GenSettings {
        temperature: cfg.gateway.temperature,
        max_tokens: cfg.gateway.max_tokens,
        max_context_tokens: cfg.gateway.max_context_tokens,
        seed: derive_seed(cfg.seed, &["queries"]),
    };
    let sft = generate_sft_queries(&store, &cfg.budget, gateway.as_ref(), &settings)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let pref = generate_preference_queries(&store, &cfg.budget, gateway.as_ref(), &settings)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let sft = assign_query_ids(sft, "q-sft");
    let pref = assign_query_ids(pref, "q-pref");
    write_queries(&ctx.path(QUERIES_SFT), &sft).map_err(|e| CliError::Other(e.to_string()))?;
    write_queries(&ctx.path(QUERIES_PREF), &pref).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.output(QUERIES_SFT)?;
    ctx.output(QUERIES_PREF)?;
    ctx.count("sft_queries", sft.len() as u64);
    ctx.count("pref_queries", pref.len() as u64);
    eprintln!("generated {} supervised and {} preference queries", sft.len(), pref.len());
    ctx.finish("gen-queries")
}

pub fn cmd_build_dataset(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let store = load_run_store(&mut ctx)?;
    let vocab = load_vocab(&mut ctx)?;
    let ids = load_ids(&mut ctx)?;
    let queries = read_queries(&ctx.input(QUERIES_SFT)?).map_err(|e| CliError::Other(e.to_string()))?;

    let (train_queries, test_queries) = split_holdout(&queries, cfg.dataset.holdout_per_unit);
    let max_len = cfg.effective_max_seq_len();
    let c2id = build_context2id(&store, &ids, &vocab, max_len)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let plain: Vec<_> = train_queries.iter().map(|r| r.query.clone()).collect();
    let q2id = build_query2id(&plain, &store, &ids, &vocab, max_len)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let combined = combine(&c2id, &q2id, cfg.dataset.combine);
    let train = shuffled(combined, derive_seed(cfg.seed, &["dataset"]));
    write_examples(&ctx.path(TRAIN_SET), &train).map_err(|e| CliError::Other(e.to_string()))?;

    write_queries(&ctx.path(QUERIES_TEST), &test_queries)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut qrels = QRels::default();
    for rec in &test_queries {
        let unit = ids
            .resolve_unit(&store, &rec.query.source_unit)
            .map_err(|e| CliError::Other(e.to_string()))?;
        qrels.insert(&rec.query_id, &unit);
    }
    qrels.write_tsv(&ctx.path(QRELS_TEST)).map_err(|e| CliError::Other(e.to_string()))?;

    ctx.output(TRAIN_SET)?;
    ctx.output(QUERIES_TEST)?;
    ctx.output(QRELS_TEST)?;
    ctx.count("context2id", c2id.len() as u64);
    ctx.count("query2id", q2id.len() as u64);
    ctx.count("train_examples", train.len() as u64);
    ctx.count("test_queries", test_queries.len() as u64);
    eprintln!(
        "dataset: {} context2id + {} query2id -> {} training examples; {} held-out test queries",
        c2id.len(),
        q2id.len(),
        train.len(),
        test_queries.len()
    );
    ctx.finish("build-dataset")
}

fn train_sft_config(cfg: &PipelineConfig) -> SftConfig {
    SftConfig {
        lr: cfg.sft.lr,
        epochs: cfg.sft.epochs,
        warmup_ratio: cfg.sft.warmup_ratio,
        batch: cfg.sft.batch,
        seed: derive_seed(cfg.seed, &["sft"]),
    }
}

fn train_rpo_config(cfg: &PipelineConfig) -> RpoConfig {
    RpoConfig {
        beta: cfg.rpo.beta,
        alpha: cfg.rpo.alpha,
        lr: cfg.rpo.lr,
        epochs: cfg.rpo.epochs,
        batch: cfg.rpo.batch,
        seed: derive_seed(cfg.seed, &["rpo"]),
    }
}

pub fn cmd_train_sft(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let vocab = load_vocab(&mut ctx)?;
    let data = read_examples(&ctx.input(TRAIN_SET)?).map_err(|e| CliError::Other(e.to_string()))?;
    let model_cfg = cfg.model_config(vocab.len());
    let scfg = train_sft_config(cfg);
    let vocab_hash = vocab.content_hash();
    let run_dir = ctx.run_dir.clone();
    let mut epoch_files = Vec::new();
    let params = train_sft(model_cfg, &data, &scfg, |p, stats| {
        let rel = format!("checkpoints/sft-epoch-{:03}.ckpt", stats.epoch + 1);
        save_checkpoint(&run_dir.join(&rel), p, &vocab_hash, scfg.seed, stats.epoch + 1)?;
        epoch_files.push(rel);
        eprintln!(
            "sft epoch {}: mean loss {:.4} over {} examples",
            stats.epoch + 1,
            stats.mean_loss,
            stats.examples
        );
        Ok(())
    })?;
    save_checkpoint(&ctx.path(SFT_CKPT), &params, &vocab_hash, scfg.seed, scfg.epochs)?;
    for rel in &epoch_files {
        ctx.output(rel)?;
    }
    ctx.output(SFT_CKPT)?;
    ctx.count("examples", data.len() as u64);
    ctx.count("epochs", scfg.epochs as u64);
    ctx.count("parameters", params.param_count() as u64);
    ctx.finish("train-sft")
}

#[derive(Debug, Clone)]
pub struct RetrieveOpts {
    pub set: QuerySet,
    /// Checkpoint to score with, relative to the run dir.
    pub checkpoint: String,
    /// Output runs file; defaults per query set.
    pub out: Option<String>,
}

impl Default for RetrieveOpts {
    fn default() -> Self {
        RetrieveOpts { set: QuerySet::Test, checkpoint: SFT_CKPT.to_string(), out: None }
    }
}

pub fn cmd_retrieve(cfg: &PipelineConfig, force: bool, opts: &RetrieveOpts) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let vocab = load_vocab(&mut ctx)?;
    let ids = load_ids(&mut ctx)?;
    let ckpt_path = ctx.input(&opts.checkpoint)?;
    let queries = read_queries(&ctx.input(opts.set.queries_file())?)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let (params, _) = load_checkpoint(&ckpt_path, Some(&vocab.content_hash()))?;

    let tokenized: Vec<(String, Vec<u32>)> = queries
        .iter()
        .map(|r| (r.query_id.clone(), vocab.encode(&r.query.query_text)))
        .collect();
    let mut runs = match ids.kind {
        IdKind::Semantic => {
            let trie = build_trie(&ids).map_err(|e| CliError::Other(e.to_string()))?;
            batch_retrieve(&params, &trie, &tokenized, cfg.retrieval.beam)?
        }
        IdKind::Atomic => tokenized
            .iter()
            .map(|(qid, toks)| atomic_rank(&params, &ids, qid, toks, cfg.retrieval.beam))
            .collect::<Result<Vec<_>, _>>()?,
    };
    for run in &mut runs {
        run.entries.truncate(cfg.retrieval.k);
    }
    let out_rel = opts.out.clone().unwrap_or_else(|| opts.set.default_runs_file().to_string());
    write_runs(&ctx.path(&out_rel), &runs)?;
    ctx.output(&out_rel)?;
    ctx.count("queries", runs.len() as u64);
    eprintln!("retrieved top-{} for {} queries -> {}", cfg.retrieval.k, runs.len(), out_rel);
    ctx.finish(&format!("retrieve-{}", out_rel.trim_end_matches(".jsonl")))
}

#[derive(Debug, Clone)]
pub struct MineOpts {
    pub runs: String,
}

impl Default for MineOpts {
    fn default() -> Self {
        MineOpts { runs: RUNS_PREF.to_string() }
    }
}

pub fn cmd_mine(cfg: &PipelineConfig, force: bool, opts: &MineOpts) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let store = load_run_store(&mut ctx)?;
    let ids = load_ids(&mut ctx)?;
    let runs = read_runs(&ctx.input(&opts.runs)?)?;
    let queries = read_queries(&ctx.input(QUERIES_PREF)?)
        .map_err(|e| CliError::Other(e.to_string()))?;

    let positives: Vec<(String, String)> = queries
        .iter()
        .map(|r| {
            let unit = ids
                .resolve_unit(&store, &r.query.source_unit)
                .map_err(|e| CliError::Other(e.to_string()))?;
            Ok((r.query_id.clone(), unit))
        })
        .collect::<Result<_, CliError>>()?;
    let unit_keys: Vec<String> = ids.iter().map(|id| id.unit_key.clone()).collect();
    let (pairs, stats) = build_pref_dataset(
        &positives,
        &runs,
        &unit_keys,
        &cfg.mining_config(),
        derive_seed(cfg.seed, &["mine"]),
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    write_pairs(&ctx.path(PAIRS), &pairs).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.output(PAIRS)?;
    ctx.count("queries", stats.queries as u64);
    ctx.count("skipped_rank_one", stats.skipped_rank_one as u64);
    ctx.count("pairs", stats.pairs as u64);
    if pairs.is_empty() {
        eprintln!("warning: every positive ranked first; the preference set is empty");
    }
    eprintln!(
        "mined {} pairs from {} queries ({} skipped at rank 1)",
        stats.pairs, stats.queries, stats.skipped_rank_one
    );
    ctx.finish("mine")
}

#[derive(Debug, Clone)]
pub struct TrainRpoOpts {
    pub pairs: String,
    pub init: String,
    pub out: String,
}

pub fn cmd_train_rpo(cfg: &PipelineConfig, force: bool, opts: &TrainRpoOpts) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let vocab = load_vocab(&mut ctx)?;
    let ids = load_ids(&mut ctx)?;
    let pairs = read_pairs(&ctx.input(&opts.pairs)?).map_err(|e| CliError::Other(e.to_string()))?;
    let queries = read_queries(&ctx.input(QUERIES_PREF)?)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let init_path = ctx.input(&opts.init)?;
    let vocab_hash = vocab.content_hash();
    let (init, _) = load_checkpoint(&init_path, Some(&vocab_hash))?;
    let reference = ReferenceModel::new(init.clone());

    let query_text: std::collections::HashMap<String, String> = queries
        .iter()
        .map(|r| (r.query_id.clone(), r.query.query_text.clone()))
        .collect();
    let examples = build_rpo_examples(&pairs, &query_text, &ids, &vocab, init.cfg.context)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let rcfg = train_rpo_config(cfg);
    let run_dir = ctx.run_dir.clone();
    let stem = opts.out.trim_end_matches(".ckpt").to_string();
    let mut epoch_files = Vec::new();
    let params = train_rpo(init, &reference, &examples, &rcfg, |p, stats| {
        let rel = format!("{stem}-epoch-{:03}.ckpt", stats.epoch + 1);
        save_checkpoint(&run_dir.join(&rel), p, &vocab_hash, rcfg.seed, stats.epoch + 1)?;
        epoch_files.push(rel);
        eprintln!(
            "rpo epoch {}: mean loss {:.4} over {} pairs",
            stats.epoch + 1,
            stats.mean_loss,
            stats.examples
        );
        Ok(())
    })?;
    save_checkpoint(&ctx.path(&opts.out), &params, &vocab_hash, rcfg.seed, rcfg.epochs)?;
    for rel in &epoch_files {
        ctx.output(rel)?;
    }
    ctx.output(&opts.out)?;
    ctx.count("pairs", examples.len() as u64);
    ctx.count("epochs", rcfg.epochs as u64);
    ctx.finish(&format!("train-rpo-{}", stem.replace('/', "-")))
}

impl TrainRpoOpts {
    pub fn standard() -> Self {
        TrainRpoOpts {
            pairs: PAIRS.to_string(),
            init: SFT_CKPT.to_string(),
            out: RPO_CKPT.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOpts {
    pub runs: String,
    pub qrels: String,
    pub label: Option<String>,
}

impl Default for EvaluateOpts {
    fn default() -> Self {
        EvaluateOpts { runs: RUNS_TEST.to_string(), qrels: QRELS_TEST.to_string(), label: None }
    }
}

const HIT_KS: [usize; 4] = [1, 4, 5, 10];
const RANK_K: usize = 10;

pub fn cmd_evaluate(cfg: &PipelineConfig, force: bool, opts: &EvaluateOpts) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let runs: Vec<RankedList> = read_runs(&ctx.input(&opts.runs)?)?;
    let qrels = QRels::read_tsv(&ctx.input(&opts.qrels)?)
        .map_err(|e| CliError::Other(e.to_string()))?;
    let label = opts.label.clone().unwrap_or_else(|| {
        Path::new(&opts.runs)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string())
    });
    let report = evaluate(&label, &runs, &qrels, &HIT_KS, RANK_K)
        .map_err(|e| CliError::Other(e.to_string()))?;
    fs::create_dir_all(ctx.path("eval")).map_err(|e| CliError::Other(e.to_string()))?;
    let rel = format!("eval/{label}.json");
    fs::write(
        ctx.path(&rel),
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Other(e.to_string()))?,
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    ctx.output(&rel)?;
    ctx.count("queries", report.per_query.len() as u64);
    println!("{}", format_table(std::slice::from_ref(&report)));
    ctx.finish(&format!("evaluate-{label}"))
}

pub fn cmd_report(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    let mut ctx = StageCtx::new(cfg, force)?;
    let eval_dir = ctx.path("eval");
    if !eval_dir.exists() {
        return Err(CliError::MissingArtifact(eval_dir));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(&eval_dir)
        .map_err(|e| CliError::Other(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::MissingArtifact(eval_dir.join("<any>.json")));
    }
    let mut reports: Vec<MetricReport> = Vec::new();
    for f in &files {
        let rel = format!("eval/{}", f.file_name().unwrap().to_string_lossy());
        ctx.input(&rel)?;
        let text = fs::read_to_string(f).map_err(|e| CliError::Other(e.to_string()))?;
        reports.push(serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))?);
    }
    let table = format_table(&reports);
    fs::write(
        ctx.path(REPORT_JSON),
        serde_json::to_string_pretty(&reports).map_err(|e| CliError::Other(e.to_string()))?,
    )
    .map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(ctx.path(REPORT_TEXT), &table).map_err(|e| CliError::Other(e.to_string()))?;
    ctx.output(REPORT_JSON)?;
    ctx.output(REPORT_TEXT)?;
    ctx.count("systems", reports.len() as u64);
    println!("{table}");
    ctx.finish("report")
}

/// Write a bundled synthetic corpus to `out`.
pub fn cmd_demo_corpus(docs: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    use std::io::Write;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::Other(e.to_string()))?;
        }
    }
    let mut w = std::io::BufWriter::new(
        fs::File::create(out).map_err(|e| CliError::Other(e.to_string()))?,
    );
    for rec in demo_corpus(docs, seed) {
        serde_json::to_writer(&mut w, &rec).map_err(|e| CliError::Other(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| CliError::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Other(e.to_string()))?;
    eprintln!("wrote {docs} synthetic documents to {}", out.display());
    Ok(())
}

/// Convenience driver for tests and the smoke path: run every stage in
/// order on one config.
pub fn run_full_pipeline(cfg: &PipelineConfig, force: bool) -> Result<(), CliError> {
    cmd_ingest(cfg, force)?;
    cmd_gen_ids(cfg, force)?;
    cmd_gen_queries(cfg, force)?;
    cmd_build_dataset(cfg, force)?;
    cmd_train_sft(cfg, force)?;
    cmd_retrieve(cfg, force, &RetrieveOpts::default())?;
    cmd_retrieve(cfg, force, &RetrieveOpts { set: QuerySet::Pref, ..Default::default() })?;
    cmd_mine(cfg, force, &MineOpts::default())?;
    cmd_train_rpo(cfg, force, &TrainRpoOpts::standard())?;
    cmd_retrieve(
        cfg,
        force,
        &RetrieveOpts {
            set: QuerySet::Test,
            checkpoint: RPO_CKPT.to_string(),
            out: Some("runs_test_rpo.jsonl".to_string()),
        },
    )?;
    cmd_evaluate(cfg, force, &EvaluateOpts { label: Some("sft".into()), ..Default::default() })?;
    cmd_evaluate(
        cfg,
        force,
        &EvaluateOpts {
            runs: "runs_test_rpo.jsonl".to_string(),
            qrels: QRELS_TEST.to_string(),
            label: Some("rpo".into()),
        },
    )?;
    cmd_report(cfg, force)
}
