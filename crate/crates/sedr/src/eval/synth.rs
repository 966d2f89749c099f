//! Synthetic long-document corpus generator.
//!
//! Every document is a concatenation of segments, each built from its own
//! small pool of topic tokens plus uniform noise. A query copies distinct
//! tokens from exactly one segment's pool of its positive document, so the
//! segment ordinal of the relevant content is controlled precisely — the
//! knob the retrieval experiments turn.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::strata::{save_metadata, Metadata, QueryMeta};
use super::trec::{write_qrels, Qrels};
use crate::encoder::{Corpus, Record, FIRST_REGULAR_ID};
use crate::error::{Result, SedrError};

/// Query ids start here so they never collide with document ids.
pub const QUERY_ID_BASE: u64 = 1_000_000;

/// Knobs of one generated retrieval task.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SyntheticCorpusConfig {
    pub num_docs: usize,
    /// `segment_count_weights[i]` weights a document having `i+1` segments.
    pub segment_count_weights: Vec<f64>,
    /// Tokens per segment body.
    pub segment_body_len: usize,
    /// Token ids are drawn from `[3, vocab_size)`.
    pub vocab_size: usize,
    /// Distinct topic tokens per segment.
    pub topic_len: usize,
    pub num_train_queries: usize,
    pub num_test_queries: usize,
    /// Distinct tokens per query, sampled from one segment's topic pool.
    pub query_len: usize,
    /// `relevant_position_weights[o]` weights planting a query at ordinal `o`.
    pub relevant_position_weights: Vec<f64>,
    /// Fraction of body tokens replaced by uniform noise.
    pub noise_ratio: f64,
    pub seed: u64,
}

impl SyntheticCorpusConfig {
    /// Defaults sized for the end-to-end desk experiment: 2,000 documents of
    /// 1–4 segments, 400 train and 100 test queries, uniform relevant
    /// position.
    pub fn desk(seed: u64) -> SyntheticCorpusConfig {
        SyntheticCorpusConfig {
            num_docs: 2000,
            segment_count_weights: vec![1.0; 4],
            segment_body_len: 32,
            vocab_size: 256,
            topic_len: 8,
            num_train_queries: 400,
            num_test_queries: 100,
            query_len: 8,
            relevant_position_weights: vec![1.0; 4],
            noise_ratio: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(SedrError::Config(msg));
        if self.num_docs == 0 {
            return err("num_docs must be positive".into());
        }
        if self.segment_body_len == 0 {
            return err("segment_body_len must be positive".into());
        }
        let usable_vocab = self.vocab_size.saturating_sub(FIRST_REGULAR_ID as usize);
        if self.topic_len == 0 || self.topic_len > usable_vocab {
            return err(format!(
                "vocab too small for distinct topics: need {} regular tokens, have {usable_vocab}",
                self.topic_len
            ));
        }
        if self.query_len == 0 || self.query_len > self.topic_len {
            return err(format!(
                "query_len {} must be in 1..={} (the topic pool size)",
                self.query_len, self.topic_len
            ));
        }
        if !(0.0..1.0).contains(&self.noise_ratio) {
            return err(format!("noise_ratio {} must be in [0, 1)", self.noise_ratio));
        }
        let check_weights = |w: &[f64], what: &str| -> Result<()> {
            if w.is_empty() || w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(SedrError::Config(format!(
                    "{what} must be non-empty, non-negative, and sum to a positive value"
                )));
            }
            Ok(())
        };
        check_weights(&self.segment_count_weights, "segment_count_weights")?;
        check_weights(&self.relevant_position_weights, "relevant_position_weights")?;
        // an ordinal-o query needs a document of at least o+1 segments
        let max_count = self.segment_count_weights.len();
        for (ordinal, &w) in self.relevant_position_weights.iter().enumerate() {
            let reachable = ordinal < max_count
                && self.segment_count_weights[ordinal..].iter().any(|&cw| cw > 0.0);
            if w > 0.0 && !reachable {
                return err(format!(
                    "relevant ordinal {ordinal} is weighted but no document can reach {} segments",
                    ordinal + 1
                ));
            }
        }
        if (self.num_train_queries > 0) && self.num_docs < 2 {
            return err("training triples need at least 2 documents".into());
        }
        Ok(())
    }
}

/// Everything one generation run produces.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub documents: Corpus,
    pub train_queries: Corpus,
    pub test_queries: Corpus,
    pub train_qrels: Qrels,
    pub test_qrels: Qrels,
    /// Metadata for every query (train and test).
    pub metadata: Metadata,
    /// `(query_id, positive_doc_id, random_negative_doc_id)` warm-up triples
    /// for the train queries.
    pub train_triples: Vec<(u64, u64, u64)>,
    /// `(doc_id, ordinal)` → that segment's distinct topic tokens.
    pub topic_pools: BTreeMap<(u64, usize), Vec<u32>>,
    /// query id → (positive doc id, planted ordinal).
    pub planted: BTreeMap<u64, (u64, usize)>,
}

/// Draw `n` distinct token ids from `[3, vocab)`.
fn sample_distinct(rng: &mut ChaCha8Rng, vocab: usize, n: usize) -> Vec<u32> {
    rand::seq::index::sample(rng, vocab - FIRST_REGULAR_ID as usize, n)
        .into_iter()
        .map(|i| i as u32 + FIRST_REGULAR_ID)
        .collect()
}

/// Generate a corpus, queries, qrels, metadata, and warm-up triples,
/// deterministically under the config's seed.
pub fn generate(cfg: &SyntheticCorpusConfig) -> Result<GeneratedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count_dist = WeightedIndex::new(&cfg.segment_count_weights)
        .map_err(|e| SedrError::Config(format!("segment_count_weights: {e}")))?;
    let position_dist = WeightedIndex::new(&cfg.relevant_position_weights)
        .map_err(|e| SedrError::Config(format!("relevant_position_weights: {e}")))?;

    // documents
    let mut docs = Vec::with_capacity(cfg.num_docs);
    let mut topic_pools = BTreeMap::new();
    let mut segment_counts = Vec::with_capacity(cfg.num_docs);
    for doc_id in 0..cfg.num_docs as u64 {
        let k = count_dist.sample(&mut rng) + 1;
        segment_counts.push(k);
        let mut tokens = Vec::with_capacity(k * cfg.segment_body_len);
        for ordinal in 0..k {
            let pool = sample_distinct(&mut rng, cfg.vocab_size, cfg.topic_len);
            for _ in 0..cfg.segment_body_len {
                if rng.gen::<f64>() < cfg.noise_ratio {
                    tokens.push(
                        rng.gen_range(FIRST_REGULAR_ID..cfg.vocab_size as u32),
                    );
                } else {
                    tokens.push(pool[rng.gen_range(0..pool.len())]);
                }
            }
            topic_pools.insert((doc_id, ordinal), pool);
        }
        docs.push(Record { id: doc_id, token_ids: tokens });
    }
    // docs eligible to host a query at each ordinal
    let max_ordinal = cfg.relevant_position_weights.len();
    let mut eligible: Vec<Vec<u64>> = vec![Vec::new(); max_ordinal];
    for (doc_id, &k) in segment_counts.iter().enumerate() {
        for slot in eligible.iter_mut().take(k.min(max_ordinal)) {
            slot.push(doc_id as u64);
        }
    }

    // queries
    let total_queries = cfg.num_train_queries + cfg.num_test_queries;
    let mut queries = Vec::with_capacity(total_queries);
    let mut planted = BTreeMap::new();
    let mut metadata = Metadata::new();
    for q in 0..total_queries as u64 {
        let ordinal = position_dist.sample(&mut rng);
        let hosts = &eligible[ordinal];
        if hosts.is_empty() {
            return Err(SedrError::Config(format!(
                "no generated document has more than {ordinal} segments; \
                 raise segment_count_weights or num_docs"
            )));
        }
        let doc_id = hosts[rng.gen_range(0..hosts.len())];
        let pool = &topic_pools[&(doc_id, ordinal)];
        let picks = rand::seq::index::sample(&mut rng, pool.len(), cfg.query_len);
        let token_ids: Vec<u32> = picks.into_iter().map(|i| pool[i]).collect();
        let query_id = QUERY_ID_BASE + q;
        queries.push(Record { id: query_id, token_ids });
        planted.insert(query_id, (doc_id, ordinal));
        metadata.insert(
            query_id.to_string(),
            QueryMeta { doc_len: docs[doc_id as usize].token_ids.len(), rel_ordinal: ordinal },
        );
    }
    let (train, test) = queries.split_at(cfg.num_train_queries);

    let mut train_qrels = Qrels::new();
    let mut test_qrels = Qrels::new();
    for (qs, qrels) in [(train, &mut train_qrels), (test, &mut test_qrels)] {
        for q in qs {
            let (doc_id, _) = planted[&q.id];
            qrels.insert(q.id.to_string(), doc_id.to_string(), 1);
        }
    }

    // random warm-up negatives for the train split
    let mut train_triples = Vec::with_capacity(train.len());
    for q in train {
        let (pos, _) = planted[&q.id];
        let neg = loop {
            let cand = rng.gen_range(0..cfg.num_docs as u64);
            if cand != pos {
                break cand;
            }
        };
        train_triples.push((q.id, pos, neg));
    }

    Ok(GeneratedData {
        documents: Corpus::new(docs)?,
        train_queries: Corpus::new(train.to_vec())?,
        test_queries: Corpus::new(test.to_vec())?,
        train_qrels,
        test_qrels,
        metadata,
        train_triples,
        topic_pools,
        planted,
    })
}

impl GeneratedData {
    /// Write the standard file set into a directory and return the paths.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let p = |name: &str| dir.join(name);
        let files = vec![
            p("corpus.tsv"),
            p("queries.train.tsv"),
            p("queries.test.tsv"),
            p("qrels.train.txt"),
            p("qrels.test.txt"),
            p("metadata.tsv"),
            p("triples.train.tsv"),
        ];
        self.documents.save_tsv(&files[0])?;
        self.train_queries.save_tsv(&files[1])?;
        self.test_queries.save_tsv(&files[2])?;
        write_qrels(&files[3], &self.train_qrels)?;
        write_qrels(&files[4], &self.test_qrels)?;
        save_metadata(&files[5], &self.metadata)?;
        let mut triples = String::new();
        for (q, pos, neg) in &self.train_triples {
            writeln!(triples, "{q}\t{pos}\t{neg}").expect("string write");
        }
        std::fs::write(&files[6], triples)?;
        Ok(files)
    }
}
