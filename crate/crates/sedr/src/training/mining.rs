//! Static hard-negative mining: retrieve each query's top candidates and
//! sample one non-relevant document per query.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{encode_query, BiEncoder, Corpus, Record};
use crate::error::{Result, SedrError};
use crate::retrieval::{build_index, search};

/// Retrieve the top-`k` non-relevant documents for every query and sample
/// one uniformly as that query's static hard negative. `positives` maps each
/// query id to its judged-relevant documents. Deterministic under `seed`.
pub fn mine_hard_negatives(
    model: &BiEncoder,
    docs: &Corpus,
    queries: &[Record],
    positives: &BTreeMap<u64, BTreeSet<u64>>,
    k: usize,
    seed: u64,
) -> Result<BTreeMap<u64, u64>> {
    if k == 0 {
        return Err(SedrError::Config("hardness must be at least 1".into()));
    }
    let k = if k > docs.len() {
        log::warn!("hardness {k} exceeds corpus size {}; clamping", docs.len());
        docs.len()
    } else {
        k
    };
    let (index, report) = build_index(model, docs)?;
    if !report.skipped.is_empty() {
        return Err(SedrError::Contract(format!(
            "{} documents failed to encode during mining",
            report.skipped.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    let empty = BTreeSet::new();
    for query in queries {
        let qvec = encode_query(model, query)?;
        let judged = positives.get(&query.id).unwrap_or(&empty);
        // enough depth to survive dropping every judged positive
        let hits = search(&index, &qvec, k + judged.len())?;
        let pool: Vec<u64> = hits
            .iter()
            .map(|h| h.doc_id)
            .filter(|id| !judged.contains(id))
            .take(k)
            .collect();
        let choice = pool
            .choose(&mut rng)
            .ok_or_else(|| {
                SedrError::Contract(format!("no candidate negatives for query {}", query.id))
            })?;
        out.insert(query.id, *choice);
    }
    Ok(out)
}
