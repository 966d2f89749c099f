//! Segment-level dense retrieval for long documents.
//!
//! A long document is split into fixed-length segments, each segment is
//! encoded into its own dense vector by a small transformer whose attention
//! can exchange information between segments, and a query is matched against
//! a document by the maximum inner product over that document's segment
//! vectors. The crate contains the full desk-scale stack: a reverse-mode
//! autodiff tensor engine, the segment encoder with four interaction
//! patterns, contrastive training with a late-cache negative queue, a flat
//! binary segment index with exhaustive search, TREC-style evaluation, and a
//! synthetic corpus generator used for end-to-end experiments.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod retrieval;
pub mod training;

pub use error::{Result, SedrError};

/// Tape over the training scalar type. All encoder/training math runs in f64.
pub type Tape64 = numerics::Tape<f64>;
/// Tape over the index storage scalar type.
pub type Tape32 = numerics::Tape<f32>;
/// Tensor node over the training scalar type.
pub type Tensor64 = numerics::Tensor<f64>;
