//! Exact exhaustive search over the segment index.
//!
//! Every record's inner product with the query is computed (64-bit
//! accumulation over the 32-bit stored vectors); per-document scores are
//! max-pooled streamingly, keeping the lowest segment ordinal on ties.

use std::collections::HashMap;

use super::index::SegmentIndex;
use crate::error::{Result, SedrError};

/// One retrieved document with its max-pooled score and winning segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub doc_id: u64,
    pub score: f64,
    pub best_seg: u16,
}

/// Exhaustive max-pooled scan. Returns at most `top_n` documents scored by
/// their best segment, sorted by score descending with ties broken by
/// ascending document id.
pub fn search(index: &SegmentIndex, query: &[f64], top_n: usize) -> Result<Vec<RetrievalHit>> {
    if query.len() != index.dim() {
        return Err(SedrError::Dimension(format!(
            "query dim {} vs index dim {}",
            query.len(),
            index.dim()
        )));
    }
    if top_n == 0 {
        return Ok(Vec::new());
    }
    let mut best: HashMap<u64, (f64, u16)> = HashMap::new();
    for rec in index.records() {
        let mut dot = 0.0f64;
        for (q, &v) in query.iter().zip(&rec.vector) {
            dot += q * v as f64;
        }
        match best.get_mut(&rec.doc_id) {
            Some(entry) => {
                // strict > keeps the lowest ordinal on exact ties
                if dot > entry.0 {
                    *entry = (dot, rec.seg_ord);
                }
            }
            None => {
                best.insert(rec.doc_id, (dot, rec.seg_ord));
            }
        }
    }
    let mut hits: Vec<RetrievalHit> = best
        .into_iter()
        .map(|(doc_id, (score, best_seg))| RetrievalHit { doc_id, score, best_seg })
        .collect();
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then(a.doc_id.cmp(&b.doc_id))
    });
    hits.truncate(top_n);
    Ok(hits)
}

/// [`search`] applied independently to each query.
pub fn batch_search(
    index: &SegmentIndex,
    queries: &[Vec<f64>],
    top_n: usize,
) -> Result<Vec<Vec<RetrievalHit>>> {
    queries.iter().map(|q| search(index, q, top_n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::index::IndexRecord;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn index_from(records: Vec<(u64, u16, Vec<f32>)>, dim: usize) -> SegmentIndex {
        let mut idx = SegmentIndex::new(dim);
        for (doc_id, seg_ord, vector) in records {
            idx.push(IndexRecord { doc_id, seg_ord, vector }).unwrap();
        }
        idx
    }

    #[test]
    fn max_pool_keeps_the_best_segment() {
        let idx = index_from(
            vec![(5, 0, vec![0.2, 0.0]), (5, 1, vec![0.7, 0.0]), (5, 2, vec![0.5, 0.0])],
            2,
        );
        let hits = search(&idx, &[1.0, 0.0], 10).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].score - 0.7f32 as f64).abs() < 1e-12);
        assert_eq!(hits[0].best_seg, 1);
    }

    #[test]
    fn equal_scores_order_by_doc_id() {
        let idx = index_from(
            vec![(9, 0, vec![1.0]), (2, 0, vec![1.0]), (4, 0, vec![1.0])],
            1,
        );
        let hits = search(&idx, &[3.0], 10).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.doc_id).collect();
        assert_eq!(ids, vec![2, 4, 9]);
    }

    #[test]
    fn segment_score_ties_keep_the_lowest_ordinal() {
        let idx = index_from(vec![(1, 0, vec![0.5]), (1, 1, vec![0.5])], 1);
        let hits = search(&idx, &[2.0], 1).unwrap();
        assert_eq!(hits[0].best_seg, 0);
    }

    #[test]
    fn top_n_zero_is_empty_and_truncation_works() {
        let idx = index_from(vec![(1, 0, vec![1.0]), (2, 0, vec![2.0])], 1);
        assert!(search(&idx, &[1.0], 0).unwrap().is_empty());
        let hits = search(&idx, &[1.0], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, 2);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let idx = index_from(vec![(1, 0, vec![1.0, 2.0])], 2);
        assert!(search(&idx, &[1.0], 5).is_err());
    }

    #[test]
    fn scan_matches_per_document_scoring_exactly() {
        // brute-force oracle: group records per doc, score with the plain
        // max-pool over f32-widened vectors, compare bit-for-bit
        let mut rng = StdRng::seed_from_u64(42);
        let dim = 8;
        let mut records = Vec::new();
        for doc in 0..100u64 {
            let segs = rng.gen_range(1..5u16);
            for ord in 0..segs {
                let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                records.push((doc, ord, v));
            }
        }
        let idx = index_from(records.clone(), dim);
        for _ in 0..20 {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let hits = search(&idx, &q, usize::MAX).unwrap();
            assert_eq!(hits.len(), 100);
            for hit in &hits {
                let mut want = f64::NEG_INFINITY;
                let mut want_ord = 0u16;
                for (doc, ord, v) in &records {
                    if doc == &hit.doc_id {
                        let dot: f64 = q.iter().zip(v).map(|(a, &b)| a * b as f64).sum();
                        if dot > want {
                            want = dot;
                            want_ord = *ord;
                        }
                    }
                }
                assert_eq!(hit.score.to_bits(), want.to_bits(), "doc {}", hit.doc_id);
                assert_eq!(hit.best_seg, want_ord);
            }
        }
    }

    #[test]
    fn batch_search_is_independent_per_query() {
        let idx = index_from(
            vec![(1, 0, vec![1.0, 0.0]), (2, 0, vec![0.0, 1.0]), (3, 0, vec![0.5, 0.5])],
            2,
        );
        let queries = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let batched = batch_search(&idx, &queries, 3).unwrap();
        for (q, hits) in queries.iter().zip(&batched) {
            assert_eq!(hits, &search(&idx, q, 3).unwrap());
        }
        // permuting queries permutes outputs
        let rev: Vec<Vec<f64>> = queries.iter().rev().cloned().collect();
        let rev_hits = batch_search(&idx, &rev, 3).unwrap();
        assert_eq!(rev_hits[0], batched[2]);
        assert_eq!(rev_hits[2], batched[0]);
    }

    proptest! {
        #[test]
        fn adding_a_document_never_reorders_existing_docs(
            base in proptest::collection::vec(
                proptest::collection::vec(-1.0f32..1.0, 3),
                1..8,
            ),
            extra in proptest::collection::vec(-1.0f32..1.0, 3),
            q in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let mut records: Vec<(u64, u16, Vec<f32>)> = base
                .iter()
                .enumerate()
                .map(|(i, v)| (i as u64, 0u16, v.clone()))
                .collect();
            let idx = index_from(records.clone(), 3);
            let before = search(&idx, &q, usize::MAX).unwrap();
            records.push((1000, 0, extra));
            let idx2 = index_from(records, 3);
            let after = search(&idx2, &q, usize::MAX).unwrap();
            let order_before: Vec<u64> =
                before.iter().map(|h| h.doc_id).collect();
            let order_after: Vec<u64> = after
                .iter()
                .map(|h| h.doc_id)
                .filter(|&d| d != 1000)
                .collect();
            prop_assert_eq!(order_before, order_after);
        }
    }
}
