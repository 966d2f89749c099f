//! Plain (non-differentiable) relevance scoring and reference loss values.
//!
//! A query–document score is the maximum inner product between the query
//! vector and the document's segment vectors; ties resolve to the lowest
//! segment ordinal. These straight-line implementations double as oracles
//! for the tape-built counterparts.

use crate::error::{Result, SedrError};
use crate::numerics::dot;

/// Max-pooled score of a query against a document's segments, with the
/// winning segment's ordinal. Ties go to the lowest ordinal.
pub fn max_pool_score(query: &[f64], segments: &[Vec<f64>]) -> Result<(f64, usize)> {
    if segments.is_empty() {
        return Err(SedrError::Contract("max_pool_score: no segments".into()));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0usize;
    for (i, seg) in segments.iter().enumerate() {
        if seg.len() != query.len() {
            return Err(SedrError::Dimension(format!(
                "max_pool_score: query dim {} vs segment dim {}",
                query.len(),
                seg.len()
            )));
        }
        let s = dot(query, seg);
        if s > best {
            best = s;
            best_idx = i;
        }
    }
    Ok((best, best_idx))
}

/// Contrastive loss of one positive score against a pool of negative scores:
/// `log(exp(s+) + Σ exp(s-)) − s+`, computed with max subtraction.
pub fn info_nce(positive: f64, negatives: &[f64]) -> f64 {
    let mut m = positive;
    for &n in negatives {
        if n > m {
            m = n;
        }
    }
    let mut sum = (positive - m).exp();
    for &n in negatives {
        sum += (n - m).exp();
    }
    m + sum.ln() - positive
}
