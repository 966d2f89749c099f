//! Ranked-retrieval metrics: MRR@100, NDCG@10, Recall@100, plus a general
//! recall-at-k helper.
//!
//! Means run over the qrels queries that have at least one relevant
//! document; queries missing from the run contribute zero. NDCG uses the
//! gain `(2^rel − 1) / log₂(rank + 1)` normalized by the ideal ranking.

use super::trec::{Qrels, Run};

/// The three headline metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub mrr_at_100: f64,
    pub ndcg_at_10: f64,
    pub recall_at_100: f64,
    /// Queries that entered the means.
    pub num_queries: usize,
}

fn dcg(grades: &[u32]) -> f64 {
    grades
        .iter()
        .enumerate()
        .map(|(i, &rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// Queries of the qrels that carry at least one relevant (grade ≥ 1)
/// document; the rest are excluded from metric means with a warning.
fn scored_queries<'q>(qrels: &'q Qrels) -> Vec<&'q String> {
    let mut keep = Vec::new();
    for q in qrels.queries() {
        if qrels.relevant_docs(q).is_empty() {
            log::warn!("query {q} has no relevant documents; excluded from metrics");
        } else {
            keep.push(q);
        }
    }
    keep
}

fn per_query_mrr(run: &Run, qrels: &Qrels, query: &str, cut: usize) -> f64 {
    let Some(ranking) = run.ranking(query) else { return 0.0 };
    for (i, e) in ranking.iter().take(cut).enumerate() {
        if qrels.grade(query, &e.doc_id) >= 1 {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn per_query_ndcg(run: &Run, qrels: &Qrels, query: &str, cut: usize) -> f64 {
    let judged = qrels.judgments(query).expect("caller filters to judged queries");
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&r| r >= 1).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    ideal.truncate(cut);
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return 0.0;
    }
    let gains: Vec<u32> = run
        .ranking(query)
        .unwrap_or(&[])
        .iter()
        .take(cut)
        .map(|e| qrels.grade(query, &e.doc_id))
        .collect();
    dcg(&gains) / idcg
}

fn per_query_recall(run: &Run, qrels: &Qrels, query: &str, cut: usize) -> f64 {
    let relevant = qrels.relevant_docs(query);
    if relevant.is_empty() {
        return 0.0;
    }
    let Some(ranking) = run.ranking(query) else { return 0.0 };
    let found = ranking
        .iter()
        .take(cut)
        .filter(|e| qrels.grade(query, &e.doc_id) >= 1)
        .count();
    found as f64 / relevant.len() as f64
}

/// Mean recall at an arbitrary cutoff.
pub fn recall_at(run: &Run, qrels: &Qrels, cut: usize) -> f64 {
    let queries = scored_queries(qrels);
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries.iter().map(|q| per_query_recall(run, qrels, q, cut)).sum();
    total / queries.len() as f64
}

/// Mean reciprocal rank at an arbitrary cutoff.
pub fn mrr_at(run: &Run, qrels: &Qrels, cut: usize) -> f64 {
    let queries = scored_queries(qrels);
    if queries.is_empty() {
        return 0.0;
    }
    let total: f64 = queries.iter().map(|q| per_query_mrr(run, qrels, q, cut)).sum();
    total / queries.len() as f64
}

/// MRR@100, NDCG@10, and Recall@100 over the scored queries. Run queries
/// with no qrels entry are ignored with a warning.
pub fn compute_metrics(run: &Run, qrels: &Qrels) -> Metrics {
    for q in run.queries() {
        if qrels.judgments(q).is_none() {
            log::warn!("run query {q} missing from qrels; excluded from metrics");
        }
    }
    let queries = scored_queries(qrels);
    let n = queries.len();
    if n == 0 {
        return Metrics { mrr_at_100: 0.0, ndcg_at_10: 0.0, recall_at_100: 0.0, num_queries: 0 };
    }
    let mut mrr = 0.0;
    let mut ndcg = 0.0;
    let mut recall = 0.0;
    for q in &queries {
        mrr += per_query_mrr(run, qrels, q, 100);
        ndcg += per_query_ndcg(run, qrels, q, 10);
        recall += per_query_recall(run, qrels, q, 100);
    }
    Metrics {
        mrr_at_100: mrr / n as f64,
        ndcg_at_10: ndcg / n as f64,
        recall_at_100: recall / n as f64,
        num_queries: n,
    }
}
