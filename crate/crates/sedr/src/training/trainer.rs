//! The sequential training loop: encode, loss, backward, Adam, then enqueue
//! the step's detached embeddings into the late cache.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::cache::{CacheEntry, LateCacheQueue};
use super::loss::{batch_loss, bind_cache, BoundInstance};
use super::optimizer::AdamState;
use crate::encoder::{
    bind_tower, encode_segments, query_batch, split_document, BiEncoder, Corpus, Record,
};
use crate::error::{annotate_io, Result, SedrError};
use crate::numerics::Tape;

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub cache_size: usize,
    pub hardness: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Full-scale defaults.
    pub fn paper() -> TrainConfig {
        TrainConfig {
            batch_size: 17,
            cache_size: 50,
            hardness: 100,
            learning_rate: 5e-5,
            epochs: 1,
            seed: 0,
        }
    }

    /// Laptop-scale defaults.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            cache_size: 16,
            hardness: 20,
            learning_rate: 1e-3,
            epochs: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SedrError::Config("batch_size must be positive".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(SedrError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One contrastive training example: a query with a judged-positive document
/// and a fixed hard negative.
#[derive(Debug, Clone)]
pub struct TrainingInstance {
    pub query: Record,
    pub positive_doc_id: u64,
    pub hard_negative_doc_id: u64,
}

impl TrainingInstance {
    pub fn new(query: Record, positive_doc_id: u64, hard_negative_doc_id: u64) -> Result<Self> {
        if positive_doc_id == hard_negative_doc_id {
            return Err(SedrError::Contract(format!(
                "query {}: positive and hard negative are the same document {positive_doc_id}",
                query.id
            )));
        }
        Ok(TrainingInstance { query, positive_doc_id, hard_negative_doc_id })
    }
}

/// Load training triples (`query_id<TAB>positive_doc_id<TAB>negative_doc_id`),
/// resolving ids against the query and document collections.
pub fn load_triples(path: &Path, queries: &Corpus, docs: &Corpus) -> Result<Vec<TrainingInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| annotate_io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse_id = |field: Option<&str>, what: &str| -> Result<u64> {
            field
                .ok_or_else(|| SedrError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("missing {what}"),
                })?
                .trim()
                .parse::<u64>()
                .map_err(|e| SedrError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad {what}: {e}"),
                })
        };
        let qid = parse_id(parts.next(), "query id")?;
        let pos = parse_id(parts.next(), "positive doc id")?;
        let neg = parse_id(parts.next(), "negative doc id")?;
        let query = queries
            .get(qid)
            .ok_or_else(|| SedrError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("unknown query id {qid}"),
            })?
            .clone();
        for (id, what) in [(pos, "positive"), (neg, "negative")] {
            if docs.get(id).is_none() {
                return Err(SedrError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("unknown {what} doc id {id}"),
                });
            }
        }
        out.push(TrainingInstance::new(query, pos, neg)?);
    }
    Ok(out)
}

/// Save training triples in the same TSV layout [`load_triples`] reads.
pub fn save_triples(path: &Path, triples: &[TrainingInstance]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in triples {
        writeln!(w, "{}\t{}\t{}", t.query.id, t.positive_doc_id, t.hard_negative_doc_id)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step training telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub cache_fill: usize,
}

/// Owns the optimizer and cache state for one training run over a model.
pub struct Trainer<'a> {
    model: &'a mut BiEncoder,
    docs: &'a Corpus,
    config: TrainConfig,
    cache: LateCacheQueue,
    adam: AdamState,
    steps: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a mut BiEncoder, docs: &'a Corpus, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = model.all_params().iter().map(|p| p.numel()).collect();
        let adam = AdamState::new(config.learning_rate, &sizes);
        let cache = LateCacheQueue::new(config.cache_size);
        Ok(Trainer { model, docs, config, cache, adam, steps: 0 })
    }

    pub fn cache(&self) -> &LateCacheQueue {
        &self.cache
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn model(&self) -> &BiEncoder {
        self.model
    }

    fn doc_record(&self, id: u64) -> Result<&Record> {
        self.docs
            .get(id)
            .ok_or_else(|| SedrError::Contract(format!("document {id} not in corpus")))
    }

    /// One optimizer step over a batch: forward, loss, backward, update,
    /// then snapshot the batch into the cache.
    pub fn train_step(&mut self, batch: &[TrainingInstance]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(SedrError::Contract("train_step: empty batch".into()));
        }
        let cfg = self.model.config.clone();
        let mut tape: Tape<f64> = Tape::new();
        let doc_enc = bind_tower(&mut tape, self.model.doc_tower(), true)?;
        let query_enc = if self.model.is_tied() {
            doc_enc.clone()
        } else {
            bind_tower(&mut tape, self.model.query_tower(), true)?
        };

        let mut bound = Vec::with_capacity(batch.len());
        for inst in batch {
            let qb = query_batch(&inst.query, &cfg)?;
            let query = encode_segments(&mut tape, &query_enc, &cfg, &qb)?;
            let pb = split_document(self.doc_record(inst.positive_doc_id)?, &cfg)?;
            let positive = encode_segments(&mut tape, &doc_enc, &cfg, &pb)?;
            let nb = split_document(self.doc_record(inst.hard_negative_doc_id)?, &cfg)?;
            let hard_negative = encode_segments(&mut tape, &doc_enc, &cfg, &nb)?;
            bound.push(BoundInstance { query, positive, hard_negative });
        }
        let cache_bound = bind_cache(&mut tape, &self.cache)?;
        let loss_id = batch_loss(&mut tape, &bound, &cache_bound)?;
        let loss = tape.value(loss_id)[0];
        if !loss.is_finite() {
            return Err(SedrError::Numeric(format!(
                "non-finite loss {loss} at step {}; aborting before the update",
                self.steps + 1
            )));
        }
        tape.backward(loss_id)?;

        // Snapshot embeddings before touching parameters (values live on the
        // tape, but collect explicitly for clarity).
        let snapshot = |tape: &Tape<f64>, id| -> Vec<Vec<f64>> {
            let (_, d) = tape.shape(id);
            tape.value(id).chunks(d).map(|r| r.to_vec()).collect()
        };
        let entries: Vec<CacheEntry> = bound
            .iter()
            .map(|b| CacheEntry {
                query: tape.value(b.query).to_vec(),
                positive_segments: snapshot(&tape, b.positive),
                negative_segments: snapshot(&tape, b.hard_negative),
            })
            .collect();

        let mut leaf_ids = doc_enc.leaves.clone();
        if !self.model.is_tied() {
            leaf_ids.extend_from_slice(&query_enc.leaves);
        }
        let grads: Vec<Option<Vec<f64>>> = leaf_ids
            .iter()
            .map(|&id| tape.grad(id).map(|g| g.to_vec()))
            .collect();
        drop(tape);

        let mut params = self.model.all_params_mut();
        self.adam.step(&mut params, &grads)?;
        self.steps += 1;

        for entry in entries {
            self.cache.push(entry);
        }
        Ok(StepRecord { step: self.steps, loss, cache_fill: self.cache.len() })
    }

    /// Shuffle instances each epoch (seeded) and run batched steps, writing
    /// one `step<TAB>loss<TAB>cache_fill` line per step to the log.
    pub fn run(
        &mut self,
        instances: &[TrainingInstance],
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<StepRecord>> {
        if instances.is_empty() {
            return Err(SedrError::Contract("training requires at least one instance".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut order: Vec<usize> = (0..instances.len()).collect();
        let mut records = Vec::new();
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<TrainingInstance> =
                    chunk.iter().map(|&i| instances[i].clone()).collect();
                let rec = self.train_step(&batch)?;
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "{}\t{}\t{}", rec.step, rec.loss, rec.cache_fill)?;
                }
                records.push(rec);
            }
            log::info!(
                "epoch {} done: {} steps, last loss {:.4}",
                epoch + 1,
                records.len(),
                records.last().map(|r| r.loss).unwrap_or(f64::NAN)
            );
        }
        Ok(records)
    }
}
