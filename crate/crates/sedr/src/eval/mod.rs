//! Evaluation harness: ranked-retrieval metrics, TREC file IO, stratified
//! reporting, and the synthetic corpus generator.

mod metrics;
mod strata;
mod synth;
mod trec;

pub use metrics::{compute_metrics, mrr_at, recall_at, Metrics};
pub use strata::{
    length_strata, load_metadata, ordinal_strata, save_metadata, stratified_report, Metadata,
    QueryMeta, Stratum, StratumReport, StratumRule,
};
pub use synth::{generate, GeneratedData, SyntheticCorpusConfig, QUERY_ID_BASE};
pub use trec::{parse_qrels, parse_run, write_qrels, write_run, Qrels, Run, RunEntry};
