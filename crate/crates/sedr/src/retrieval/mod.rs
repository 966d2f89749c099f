//! Flat segment-vector index: building, binary persistence, and exact
//! max-pooled exhaustive search.

mod index;
mod search;

pub use index::{build_index, load_index, save_index, BuildReport, IndexRecord, SegmentIndex};
pub use search::{batch_search, search, RetrievalHit};
