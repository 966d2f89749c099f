//! Contrastive training: scoring, the late-cache negative queue, losses,
//! the Adam optimizer, checkpointing, and the training loop.

mod cache;
mod checkpoint;
mod loss;
mod mining;
mod optimizer;
mod score;
mod trainer;

pub use cache::{CacheEntry, LateCacheQueue};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{
    assemble_negatives, batch_loss, bind_cache, cache_negatives, doc_score, nce_loss,
    BoundCacheEntry, BoundInstance,
};
pub use mining::mine_hard_negatives;
pub use optimizer::AdamState;
pub use score::{info_nce, max_pool_score};
pub use trainer::{
    load_triples, save_triples, StepRecord, TrainConfig, Trainer, TrainingInstance,
};
