//! Command-line surface tying the pipeline together: corpus generation,
//! training, negative mining, indexing, search, evaluation, and diagnostics.
//!
//! Every command is deterministic under a fixed seed and fixed inputs, and
//! writes a JSON manifest next to its primary output (or at `--manifest`).
//! Exit codes are a stable scripting contract: 0 success, 2 usage or
//! configuration error, 3 numerical / data-integrity failure.

mod commands;
mod manifest;

pub use commands::{run_gradcheck, GradcheckSpec};
pub use manifest::RunManifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::encoder::InteractionPattern;
use crate::error::{Result, SedrError};

fn parse_pattern(s: &str) -> Result<InteractionPattern> {
    s.parse()
}

/// Resolve a seed: the flag wins, then the `SEDR_SEED` environment variable,
/// then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("SEDR_SEED") {
        Ok(v) => v.trim().parse().map_err(|e| {
            SedrError::Config(format!("SEDR_SEED `{v}` is not a valid seed: {e}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(SedrError::Config(format!("SEDR_SEED: {e}"))),
    }
}

/// Segment-level dense retrieval for long documents.
#[derive(Debug, Parser)]
#[command(name = "sedr", version, about, propagate_version = true)]
pub struct Cli {
    /// Bound the thread pool used for encoding and search.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Write the run manifest here instead of next to the primary output.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-document corpus with queries, qrels,
    /// metadata, and warm-up training triples.
    GenCorpus(GenCorpusArgs),
    /// Train a bi-encoder on triples and save a checkpoint plus a step log.
    Train(TrainArgs),
    /// Mine one static hard negative per query from a trained checkpoint.
    MineNegatives(MineNegativesArgs),
    /// Encode a corpus into a flat segment-vector index file.
    Index(IndexArgs),
    /// Run queries against an index and write a TREC-style run file.
    Search(SearchArgs),
    /// Score a run file against qrels (optionally per stratum).
    Eval(EvalArgs),
    /// Compare the autodiff gradient of the full batch loss against finite
    /// differences; exits 0 iff the max relative error is below 1e-4.
    Gradcheck(GradcheckArgs),
    /// Train all four interaction patterns on one corpus and tabulate
    /// metrics, wall-clock, and parameter counts.
    ComparePatterns(ComparePatternsArgs),
    /// Report mean segment dispersion (pairwise cosine distance) per
    /// checkpoint over a corpus.
    Dispersion(DispersionArgs),
}

#[derive(Debug, clap::Args)]
pub struct GenCorpusArgs {
    /// Directory receiving corpus.tsv, queries, qrels, metadata, and triples.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub num_docs: Option<usize>,
    /// Documents draw 1..=N segments uniformly (overridden by
    /// --segment-weights).
    #[arg(long)]
    pub max_segments: Option<usize>,
    /// Comma-separated weights for a document having 1,2,… segments.
    #[arg(long, value_delimiter = ',')]
    pub segment_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub segment_body_len: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Distinct topic tokens per segment.
    #[arg(long)]
    pub topic_len: Option<usize>,
    #[arg(long)]
    pub train_queries: Option<usize>,
    #[arg(long)]
    pub test_queries: Option<usize>,
    #[arg(long)]
    pub query_len: Option<usize>,
    /// Comma-separated weights for planting the query at ordinal 0,1,….
    #[arg(long, value_delimiter = ',')]
    pub position_weights: Option<Vec<f64>>,
    /// Fraction of body tokens replaced by uniform noise, in [0, 1).
    #[arg(long)]
    pub noise_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Document collection (`id<TAB>token ids`).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Query collection (`id<TAB>token ids`).
    #[arg(long)]
    pub queries: PathBuf,
    /// Training triples (`query<TAB>positive<TAB>negative`).
    #[arg(long)]
    pub triples: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step TSV log (default: `<out>.log.tsv`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Architecture profile: tiny, desk, or paper.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// Interaction pattern: maxp, segint, head, or global.
    #[arg(long, value_parser = parse_pattern)]
    pub pattern: Option<InteractionPattern>,
    /// Share one tower between queries and documents.
    #[arg(long)]
    pub tied: bool,
    /// Continue training from an existing checkpoint (the warm-up phase of
    /// the two-phase pipeline). Overrides --profile, --pattern, --tied, and
    /// --max-segments with the checkpoint's own architecture.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// Override the profile's segment cap (1 = truncation baseline).
    #[arg(long)]
    pub max_segments: Option<usize>,
    /// Late-cache queue capacity in batches-worth of entries.
    #[arg(long)]
    pub cache_size: Option<usize>,
    /// Disable late-cache negatives entirely (same as --cache-size 0).
    #[arg(long, conflicts_with = "cache_size")]
    pub no_cache_negative: bool,
    /// Candidate depth used when this run's triples were mined (recorded in
    /// the manifest).
    #[arg(long)]
    pub hardness: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct MineNegativesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Output triples TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Sample the negative uniformly from the top-K non-relevant hits.
    #[arg(long, default_value_t = 20)]
    pub hardness: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Index output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, clap::Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Run file output path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    /// Run tag written in the TREC run file.
    #[arg(long, default_value = "sedr")]
    pub tag: String,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Also report per-stratum metrics: `ordinal` (relevant-segment
    /// position) or `length` (positive-document token count).
    #[arg(long, requires = "metadata", value_parser = ["ordinal", "length"])]
    pub strata: Option<String>,
    /// Query metadata TSV (`query<TAB>doc_len<TAB>rel_ordinal`).
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Inclusive upper bounds of the length bands (default: the distinct
    /// document lengths observed in the metadata).
    #[arg(long, value_delimiter = ',')]
    pub length_bounds: Option<Vec<usize>>,
    /// Write the metrics report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "tiny")]
    pub profile: String,
    #[arg(long, default_value = "segint", value_parser = parse_pattern)]
    pub pattern: InteractionPattern,
    /// Segments per synthetic document.
    #[arg(long, default_value_t = 3)]
    pub segments: usize,
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    /// Detached cache entries included in the checked loss.
    #[arg(long, default_value_t = 2)]
    pub cache_entries: usize,
    /// Minimum number of sampled coordinates (at least one per parameter).
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct ComparePatternsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub train_queries: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long)]
    pub test_queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Directory receiving per-pattern checkpoints, runs, and comparison.tsv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "desk")]
    pub profile: String,
    #[arg(long)]
    pub tied: bool,
    #[arg(long)]
    pub max_segments: Option<usize>,
    #[arg(long)]
    pub cache_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub top_n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, clap::Args)]
pub struct DispersionArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to report on; repeat for several.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Evaluate on a random subset of this many documents.
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the per-checkpoint table as TSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dispatch a parsed command line. Usage errors never reach this point; any
/// error returned here maps to an exit code via [`SedrError::exit_code`].
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SedrError::Config("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized; --threads {n} ignored ({e})");
        }
    }
    let manifest_override = cli.manifest.as_deref();
    match cli.command {
        Command::GenCorpus(args) => commands::gen_corpus(&args, manifest_override),
        Command::Train(args) => commands::train(&args, manifest_override),
        Command::MineNegatives(args) => commands::mine_negatives(&args, manifest_override),
        Command::Index(args) => commands::index(&args, manifest_override),
        Command::Search(args) => commands::search_cmd(&args, manifest_override),
        Command::Eval(args) => commands::eval(&args, manifest_override),
        Command::Gradcheck(args) => commands::gradcheck(&args, manifest_override),
        Command::ComparePatterns(args) => commands::compare_patterns(&args, manifest_override),
        Command::Dispersion(args) => commands::dispersion(&args, manifest_override),
    }
}
