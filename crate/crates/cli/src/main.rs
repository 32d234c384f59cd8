use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use genret_cli::config::PipelineConfig;
use genret_cli::stages::{
    cmd_build_dataset, cmd_demo_corpus, cmd_evaluate, cmd_gen_ids, cmd_gen_queries, cmd_ingest,
    cmd_mine, cmd_report, cmd_retrieve, cmd_train_rpo, cmd_train_sft, EvaluateOpts, MineOpts,
    QuerySet, RetrieveOpts, TrainRpoOpts, PAIRS, SFT_CKPT,
};
use genret_cli::CliError;

/// Generative retrieval pipeline: two-stage training on synthetic data
/// with trie-constrained decoding.
#[derive(Parser)]
#[command(name = "genret", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration file.
    #[arg(long, default_value = "genret.toml", global = false)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Force the deterministic offline stub instead of a remote endpoint.
    #[arg(long)]
    stub_llm: bool,
    /// Proceed even when upstream artifacts look stale.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.stub_llm {
            cfg.gateway.stub = true;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read the corpus JSONL and build the normalized store.
    Ingest(Common),
    /// Assign identifiers (keyword or atomic) and extend the vocabulary.
    GenIds(Common),
    /// Generate supervised and preference-stage synthetic queries.
    GenQueries(Common),
    /// Build training examples and the held-out test split.
    BuildDataset(Common),
    /// Supervised fine-tuning; checkpoints per epoch.
    TrainSft(Common),
    /// Rank identifiers for a query set with a trained checkpoint.
    Retrieve {
        #[command(flatten)]
        common: Common,
        /// Which query file to score: the held-out test queries or the
        /// preference-stage queries.
        #[arg(long, value_parser = ["test", "pref"], default_value = "test")]
        set: String,
        /// Checkpoint path relative to the run dir.
        #[arg(long, default_value = SFT_CKPT)]
        checkpoint: String,
        /// Output runs file (defaults to runs_<set>.jsonl).
        #[arg(long)]
        out: Option<String>,
    },
    /// Mine hard negatives from preference-query rankings.
    Mine {
        #[command(flatten)]
        common: Common,
        /// Runs file to mine from.
        #[arg(long, default_value = "runs_pref.jsonl")]
        runs: String,
    },
    /// Preference optimization from the supervised checkpoint.
    TrainRpo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = PAIRS)]
        pairs: String,
        /// Initial (and reference) checkpoint.
        #[arg(long, default_value = SFT_CKPT)]
        init: String,
        /// Output checkpoint path relative to the run dir.
        #[arg(long, default_value = "checkpoints/rpo.ckpt")]
        out: String,
    },
    /// Score a runs file against relevance judgments.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "runs_test.jsonl")]
        runs: String,
        #[arg(long, default_value = "qrels_test.tsv")]
        qrels: String,
        /// Report label (defaults to the runs file stem).
        #[arg(long)]
        label: Option<String>,
    },
    /// Merge every evaluation into one comparison table.
    Report(Common),
    /// Write the bundled synthetic demo corpus.
    DemoCorpus {
        #[arg(long, default_value_t = 200)]
        docs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "corpus.jsonl")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(c) => cmd_ingest(&c.load()?, c.force),
        Command::GenIds(c) => cmd_gen_ids(&c.load()?, c.force),
        Command::GenQueries(c) => cmd_gen_queries(&c.load()?, c.force),
        Command::BuildDataset(c) => cmd_build_dataset(&c.load()?, c.force),
        Command::TrainSft(c) => cmd_train_sft(&c.load()?, c.force),
        Command::Retrieve { common, set, checkpoint, out } => {
            let opts = RetrieveOpts {
                set: if set == "pref" { QuerySet::Pref } else { QuerySet::Test },
                checkpoint,
                out,
            };
            cmd_retrieve(&common.load()?, common.force, &opts)
        }
        Command::Mine { common, runs } => {
            cmd_mine(&common.load()?, common.force, &MineOpts { runs })
        }
        Command::TrainRpo { common, pairs, init, out } => {
            cmd_train_rpo(&common.load()?, common.force, &TrainRpoOpts { pairs, init, out })
        }
        Command::Evaluate { common, runs, qrels, label } => {
            cmd_evaluate(&common.load()?, common.force, &EvaluateOpts { runs, qrels, label })
        }
        Command::Report(c) => cmd_report(&c.load()?, c.force),
        Command::DemoCorpus { docs, seed, out } => cmd_demo_corpus(docs, seed, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
