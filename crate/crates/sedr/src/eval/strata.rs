//! Stratified evaluation: the same metrics restricted to query subsets
//! defined by relevant-segment ordinal or positive-document length.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{compute_metrics, Metrics};
use super::trec::{Qrels, Run};
use crate::error::{annotate_io, Result, SedrError};

/// Per-query generation facts used to slice evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryMeta {
    /// Token count of the positive document.
    pub doc_len: usize,
    /// Segment ordinal holding the planted relevant content.
    pub rel_ordinal: usize,
}

/// Query id → metadata.
pub type Metadata = BTreeMap<String, QueryMeta>;

/// Load metadata lines `query_id<TAB>doc_len<TAB>rel_ordinal`.
pub fn load_metadata(path: &Path) -> Result<Metadata> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    let mut out = Metadata::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(SedrError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|e| SedrError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad {what} `{s}`: {e}"),
            })
        };
        let doc_len = parse(fields[1], "doc length")?;
        let rel_ordinal = parse(fields[2], "relevant ordinal")?;
        out.insert(fields[0].to_string(), QueryMeta { doc_len, rel_ordinal });
    }
    Ok(out)
}

/// Write metadata in the layout [`load_metadata`] reads.
pub fn save_metadata(path: &Path, metadata: &Metadata) -> Result<()> {
    let mut out = String::new();
    for (q, m) in metadata {
        writeln!(out, "{q}\t{}\t{}", m.doc_len, m.rel_ordinal).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Membership rule of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratumRule {
    OrdinalIs(usize),
    OrdinalAtLeast(usize),
    /// Inclusive token-count bounds on the positive document.
    DocLenBetween(usize, usize),
}

impl StratumRule {
    pub fn matches(&self, meta: &QueryMeta) -> bool {
        match *self {
            StratumRule::OrdinalIs(o) => meta.rel_ordinal == o,
            StratumRule::OrdinalAtLeast(o) => meta.rel_ordinal >= o,
            StratumRule::DocLenBetween(lo, hi) => meta.doc_len >= lo && meta.doc_len <= hi,
        }
    }
}

/// A named query subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub name: String,
    pub rule: StratumRule,
}

/// One stratum's metrics; `None` marks an empty stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumReport {
    pub name: String,
    pub num_queries: usize,
    pub metrics: Option<Metrics>,
}

/// One stratum per relevant-segment ordinal observed in the metadata.
pub fn ordinal_strata(metadata: &Metadata) -> Vec<Stratum> {
    let mut ordinals: Vec<usize> = metadata.values().map(|m| m.rel_ordinal).collect();
    ordinals.sort_unstable();
    ordinals.dedup();
    ordinals
        .into_iter()
        .map(|o| Stratum { name: format!("ordinal={o}"), rule: StratumRule::OrdinalIs(o) })
        .collect()
}

/// Length bands split at the given upper bounds (inclusive), with a final
/// open-ended band.
pub fn length_strata(bounds: &[usize]) -> Vec<Stratum> {
    let mut out = Vec::new();
    let mut lo = 0usize;
    for &b in bounds {
        out.push(Stratum {
            name: format!("len={lo}..={b}"),
            rule: StratumRule::DocLenBetween(lo, b),
        });
        lo = b + 1;
    }
    out.push(Stratum {
        name: format!("len>={lo}"),
        rule: StratumRule::DocLenBetween(lo, usize::MAX),
    });
    out
}

/// Evaluate each stratum separately. Every relevant qrels query must appear
/// in the metadata.
pub fn stratified_report(
    run: &Run,
    qrels: &Qrels,
    metadata: &Metadata,
    strata: &[Stratum],
) -> Result<Vec<StratumReport>> {
    for q in qrels.queries() {
        if !qrels.relevant_docs(q).is_empty() && !metadata.contains_key(q) {
            return Err(SedrError::Contract(format!("query {q} missing from metadata")));
        }
    }
    let mut out = Vec::with_capacity(strata.len());
    for stratum in strata {
        let sub = qrels.filtered(|q| metadata.get(q).is_some_and(|m| stratum.rule.matches(m)));
        // restrict the run too, so queries outside the stratum are not
        // flagged as unjudged
        let sub_run = run.filtered(|q| sub.judgments(q).is_some());
        let scored = sub
            .queries()
            .filter(|q| !sub.relevant_docs(q).is_empty())
            .count();
        let metrics = if scored == 0 { None } else { Some(compute_metrics(&sub_run, &sub)) };
        out.push(StratumReport { name: stratum.name.clone(), num_queries: scored, metrics });
    }
    Ok(out)
}
