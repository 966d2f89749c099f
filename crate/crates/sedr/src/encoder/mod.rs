//! Segment-level document encoder: splitting, parameters, and the
//! transformer forward pass with its four segment-interaction patterns.

mod config;
mod corpus;
mod forward;
mod params;
mod segment;

pub use config::{EncoderConfig, InteractionPattern};
pub use corpus::{
    Corpus, DocumentRecord, QueryRecord, Record, Vocabulary, CLS_ID, FIRST_REGULAR_ID, PAD_ID,
    SEP_ID,
};
pub use forward::{
    bind_tower, embed_inputs, encode_document, encode_query, encode_segments, segment_dispersion,
    BoundEncoder, BoundLayer,
};
pub use params::{BiEncoder, EncoderRole, ModelParameters};
pub use segment::{query_batch, split_document, SegmentBatch};
