//! Differentiable contrastive losses built on the tape.
//!
//! Each training instance contributes an InfoNCE loss of its query against
//! one positive document and a pool of negatives: its own hard negative, the
//! other batch instances' documents, and every cached document. Cached
//! queries contribute their own losses, anchored on detached snapshots so
//! that gradient reaches only the current batch's document embeddings. The
//! batch loss is the plain sum of all of these.

use super::cache::LateCacheQueue;
use crate::error::{Result, SedrError};
use crate::numerics::{Tape, TensorId};

/// One training instance's embeddings on the tape. Documents are `[k × d]`
/// segment stacks; the query is a single `[1 × d]` row.
#[derive(Debug, Clone, Copy)]
pub struct BoundInstance {
    pub query: TensorId,
    pub positive: TensorId,
    pub hard_negative: TensorId,
}

/// One cache entry bound onto the tape as constant leaves.
#[derive(Debug, Clone, Copy)]
pub struct BoundCacheEntry {
    pub query: TensorId,
    pub positive: TensorId,
    pub negative: TensorId,
}

/// Bind every cache entry as constant (gradient-free) tape leaves,
/// oldest first.
pub fn bind_cache(tape: &mut Tape<f64>, cache: &LateCacheQueue) -> Result<Vec<BoundCacheEntry>> {
    let flat = |segs: &[Vec<f64>]| -> (Vec<f64>, usize, usize) {
        let rows = segs.len();
        let cols = segs.first().map_or(0, |s| s.len());
        (segs.concat(), rows, cols)
    };
    let mut out = Vec::with_capacity(cache.len());
    for entry in cache.iter() {
        let d = entry.query.len();
        let query = tape.constant(entry.query.clone(), 1, d)?;
        let (pdata, pr, pc) = flat(&entry.positive_segments);
        let positive = tape.constant(pdata, pr, pc)?;
        let (ndata, nr, nc) = flat(&entry.negative_segments);
        let negative = tape.constant(ndata, nr, nc)?;
        out.push(BoundCacheEntry { query, positive, negative });
    }
    Ok(out)
}

/// Max-pooled query–document score as a `[1 × 1]` tape scalar.
pub fn doc_score(tape: &mut Tape<f64>, query: TensorId, segments: TensorId) -> Result<TensorId> {
    let dots = tape.matmul_transb(query, segments)?;
    tape.max_all(dots)
}

/// InfoNCE loss of one anchor against its positive and a non-empty pool of
/// negative documents: `logsumexp(s⁺, s⁻…) − s⁺`.
pub fn nce_loss(
    tape: &mut Tape<f64>,
    query: TensorId,
    positive: TensorId,
    negatives: &[TensorId],
) -> Result<TensorId> {
    if negatives.is_empty() {
        return Err(SedrError::Contract("nce_loss: empty negative pool".into()));
    }
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    scores.push(doc_score(tape, query, positive)?);
    for &neg in negatives {
        scores.push(doc_score(tape, query, neg)?);
    }
    let row = tape.concat_cols(&scores)?;
    let lse = tape.logsumexp(row)?;
    tape.sub(lse, scores[0])
}

/// The negative pool for batch instance `idx`: its own hard negative, then
/// every other instance's positive and hard negative in batch order, then
/// every cache entry's documents oldest first. The pool always has exactly
/// `1 + 2(B−1) + 2·|cache|` entries.
pub fn assemble_negatives(
    idx: usize,
    batch: &[BoundInstance],
    cache: &[BoundCacheEntry],
) -> Vec<TensorId> {
    let mut negs = Vec::with_capacity(2 * batch.len() - 1 + 2 * cache.len());
    negs.push(batch[idx].hard_negative);
    for (j, other) in batch.iter().enumerate() {
        if j != idx {
            negs.push(other.positive);
            negs.push(other.hard_negative);
        }
    }
    for entry in cache {
        negs.push(entry.positive);
        negs.push(entry.negative);
    }
    negs
}

/// The negative pool for cache entry `idx`: its own detached hard negative,
/// then every current batch instance's documents, then the other cache
/// entries' documents oldest first.
pub fn cache_negatives(
    idx: usize,
    batch: &[BoundInstance],
    cache: &[BoundCacheEntry],
) -> Vec<TensorId> {
    let mut negs = Vec::with_capacity(1 + 2 * batch.len() + 2 * (cache.len() - 1));
    negs.push(cache[idx].negative);
    for inst in batch {
        negs.push(inst.positive);
        negs.push(inst.hard_negative);
    }
    for (j, entry) in cache.iter().enumerate() {
        if j != idx {
            negs.push(entry.positive);
            negs.push(entry.negative);
        }
    }
    negs
}

/// Total loss of a batch: the sum of each instance's InfoNCE loss plus the
/// sum of every cache entry's loss.
pub fn batch_loss(
    tape: &mut Tape<f64>,
    batch: &[BoundInstance],
    cache: &[BoundCacheEntry],
) -> Result<TensorId> {
    if batch.is_empty() {
        return Err(SedrError::Contract("batch_loss: empty batch".into()));
    }
    let mut losses = Vec::with_capacity(batch.len() + cache.len());
    for (i, inst) in batch.iter().enumerate() {
        let negs = assemble_negatives(i, batch, cache);
        losses.push(nce_loss(tape, inst.query, inst.positive, &negs)?);
    }
    for (i, entry) in cache.iter().enumerate() {
        let negs = cache_negatives(i, batch, cache);
        losses.push(nce_loss(tape, entry.query, entry.positive, &negs)?);
    }
    if losses.len() == 1 {
        return Ok(losses[0]);
    }
    let row = tape.concat_cols(&losses)?;
    tape.sum_all(row)
}
