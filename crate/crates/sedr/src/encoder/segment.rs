//! Splitting a document into framed, fixed-width segment rows.

use super::config::EncoderConfig;
use super::corpus::{Record, CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Result, SedrError};

/// A document (or query) as framed token rows ready for the encoder.
///
/// Every row is `[CLS, body…, SEP, PAD…]` of the same `width`; `pad_mask`
/// is true on real positions (CLS through SEP inclusive) and false on
/// padding. Only the last row may contain padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBatch {
    pub token_ids: Vec<Vec<u32>>,
    pub pad_mask: Vec<Vec<bool>>,
    pub num_segments: usize,
    pub width: usize,
}

impl SegmentBatch {
    fn frame_row(body: &[u32], width: usize) -> (Vec<u32>, Vec<bool>) {
        let mut row = Vec::with_capacity(width);
        let mut mask = Vec::with_capacity(width);
        row.push(CLS_ID);
        row.extend_from_slice(body);
        row.push(SEP_ID);
        mask.resize(row.len(), true);
        row.resize(width, PAD_ID);
        mask.resize(width, false);
        (row, mask)
    }
}

/// Split a document into at most `max_segments` segments of
/// `segment_body_len` tokens each, truncating anything beyond the cap.
/// Positions restart inside every segment; segment order is carried only by
/// the segment-individual embedding added later.
pub fn split_document(doc: &Record, cfg: &EncoderConfig) -> Result<SegmentBatch> {
    if doc.token_ids.is_empty() {
        return Err(SedrError::Contract(format!(
            "document {} has no tokens",
            doc.id
        )));
    }
    let m = cfg.segment_body_len;
    let cap = cfg.max_segments * m;
    let tokens = if doc.token_ids.len() > cap {
        &doc.token_ids[..cap]
    } else {
        &doc.token_ids[..]
    };
    let k = tokens.len().div_ceil(m);
    let width = cfg.frame_width();

    let mut token_rows = Vec::with_capacity(k);
    let mut mask_rows = Vec::with_capacity(k);
    for i in 0..k {
        let body = &tokens[i * m..((i + 1) * m).min(tokens.len())];
        let (row, mask) = SegmentBatch::frame_row(body, width);
        token_rows.push(row);
        mask_rows.push(mask);
    }
    Ok(SegmentBatch {
        token_ids: token_rows,
        pad_mask: mask_rows,
        num_segments: k,
        width,
    })
}

/// Frame a query as a single unpadded segment. Queries longer than one
/// segment body are truncated with a warning.
pub fn query_batch(query: &Record, cfg: &EncoderConfig) -> Result<SegmentBatch> {
    if query.token_ids.is_empty() {
        return Err(SedrError::Contract(format!(
            "query {} has no tokens",
            query.id
        )));
    }
    let m = cfg.segment_body_len;
    let tokens = if query.token_ids.len() > m {
        log::warn!(
            "query {} has {} tokens; truncating to one segment of {m}",
            query.id,
            query.token_ids.len()
        );
        &query.token_ids[..m]
    } else {
        &query.token_ids[..]
    };
    let width = tokens.len() + 2;
    let (row, mask) = SegmentBatch::frame_row(tokens, width);
    Ok(SegmentBatch {
        token_ids: vec![row],
        pad_mask: vec![mask],
        num_segments: 1,
        width,
    })
}
