//! The encoder forward pass over a tape, for all four interaction patterns.
//!
//! Each document is a stack of framed segment rows. Every transformer layer
//! projects the whole stack once, then runs attention per segment with a
//! pattern-specific key set:
//!
//! * `maxp` — keys are the segment's own positions;
//! * `segint` — own positions plus the other segments' CLS states, taken
//!   from the layer input (so all segments read the same snapshot);
//! * `head` — like `maxp`, plus one extra standard layer over the final CLS
//!   vectors;
//! * `global` — CLS rows attend over every position of every segment, other
//!   rows attend like `segint`.
//!
//! The final CLS vector of each segment goes through a learned linear
//! projection to become that segment's representation.

use super::config::{EncoderConfig, InteractionPattern};
use super::corpus::Record;
use super::params::{BiEncoder, LayerIdx, ModelParameters};
use super::segment::{query_batch, split_document, SegmentBatch};
use crate::error::{Result, SedrError};
use crate::numerics::{cosine, l2_norm, Tape, TensorId};

/// Layer-norm epsilon used throughout the stack.
const LN_EPS: f64 = 1e-12;

/// Tape leaf ids for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BoundLayer {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
    pub ffn_w1: TensorId,
    pub ffn_b1: TensorId,
    pub ffn_w2: TensorId,
    pub ffn_b2: TensorId,
    pub ln1_gain: TensorId,
    pub ln1_bias: TensorId,
    pub ln2_gain: TensorId,
    pub ln2_bias: TensorId,
}

/// Tape leaf ids for a whole tower, plus the flat list in declaration order
/// (used to read gradients back out).
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub leaves: Vec<TensorId>,
    tok: TensorId,
    pos: TensorId,
    seg: TensorId,
    layers: Vec<BoundLayer>,
    head: Option<BoundLayer>,
    cls_w: TensorId,
    cls_b: TensorId,
}

fn bound_layer(ids: &[TensorId], idx: &LayerIdx) -> BoundLayer {
    BoundLayer {
        wq: ids[idx.wq],
        wk: ids[idx.wk],
        wv: ids[idx.wv],
        wo: ids[idx.wo],
        ffn_w1: ids[idx.ffn_w1],
        ffn_b1: ids[idx.ffn_b1],
        ffn_w2: ids[idx.ffn_w2],
        ffn_b2: ids[idx.ffn_b2],
        ln1_gain: ids[idx.ln1_gain],
        ln1_bias: ids[idx.ln1_bias],
        ln2_gain: ids[idx.ln2_gain],
        ln2_bias: ids[idx.ln2_bias],
    }
}

/// Register every parameter of a tower as a tape leaf.
pub fn bind_tower(tape: &mut Tape<f64>, tower: &ModelParameters, trainable: bool) -> Result<BoundEncoder> {
    let mut leaves = Vec::with_capacity(tower.params().len());
    for p in tower.params() {
        leaves.push(tape.leaf(p.data.clone(), p.rows(), p.cols(), trainable)?);
    }
    Ok(BoundEncoder {
        tok: leaves[tower.tok],
        pos: leaves[tower.pos],
        seg: leaves[tower.seg],
        layers: tower.layers.iter().map(|l| bound_layer(&leaves, l)).collect(),
        head: tower.head.as_ref().map(|l| bound_layer(&leaves, l)),
        cls_w: leaves[tower.cls_w],
        cls_b: leaves[tower.cls_b],
        leaves,
    })
}

/// Input embedding: token + position + segment-individual embedding, one row
/// per position of every segment. Positions restart inside each segment, so
/// segment order is carried only by the segment embedding.
pub fn embed_inputs(
    tape: &mut Tape<f64>,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    batch: &SegmentBatch,
) -> Result<TensorId> {
    let mut tok_ids = Vec::with_capacity(batch.num_segments * batch.width);
    let mut pos_ids = Vec::with_capacity(tok_ids.capacity());
    let mut seg_ids = Vec::with_capacity(tok_ids.capacity());
    for (i, row) in batch.token_ids.iter().enumerate() {
        for (p, &t) in row.iter().enumerate() {
            if t as usize >= cfg.vocab_size {
                return Err(SedrError::Contract(format!(
                    "token id {t} out of range for vocab_size {}",
                    cfg.vocab_size
                )));
            }
            tok_ids.push(t as usize);
            pos_ids.push(p);
            seg_ids.push(i);
        }
    }
    let t = tape.gather_rows(enc.tok, &tok_ids)?;
    let p = tape.gather_rows(enc.pos, &pos_ids)?;
    let s = tape.gather_rows(enc.seg, &seg_ids)?;
    let tp = tape.add(t, p)?;
    tape.add(tp, s)
}

/// Key/value row indices and mask for one segment under `segint` keys:
/// own positions followed by the other segments' CLS rows. When
/// `suppress_foreign` is set the foreign CLS keys stay in the list but are
/// masked out, which must reproduce the independent-segment computation.
fn segint_keys(
    i: usize,
    k: usize,
    w: usize,
    own_mask: &[bool],
    suppress_foreign: bool,
) -> (Vec<usize>, Vec<bool>) {
    let mut idx: Vec<usize> = (i * w..(i + 1) * w).collect();
    let mut mask = own_mask.to_vec();
    for j in 0..k {
        if j != i {
            idx.push(j * w);
            mask.push(!suppress_foreign);
        }
    }
    (idx, mask)
}

/// Multi-head attention for one group of query rows against one key set.
/// `q_full`/`k_full`/`v_full` are the projections of the whole stack; rows
/// are selected per call, which is bit-identical to projecting the selected
/// rows directly.
fn attention(
    tape: &mut Tape<f64>,
    proj: (TensorId, TensorId, TensorId),
    q_idx: &[usize],
    kv_idx: &[usize],
    kv_mask: &[bool],
    lay: &BoundLayer,
    cfg: &EncoderConfig,
) -> Result<TensorId> {
    let (q_full, k_full, v_full) = proj;
    let dk = cfg.hidden_dim / cfg.num_heads;
    let q = tape.select_rows(q_full, q_idx)?;
    let kk = tape.select_rows(k_full, kv_idx)?;
    let vv = tape.select_rows(v_full, kv_idx)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mask: Option<Vec<bool>> = if kv_mask.iter().all(|&b| b) {
        None
    } else {
        let mut m = Vec::with_capacity(q_idx.len() * kv_idx.len());
        for _ in 0..q_idx.len() {
            m.extend_from_slice(kv_mask);
        }
        Some(m)
    };
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = tape.slice_cols(q, h * dk, dk)?;
        let kh = tape.slice_cols(kk, h * dk, dk)?;
        let vh = tape.slice_cols(vv, h * dk, dk)?;
        let logits = tape.matmul_transb(qh, kh)?;
        let scaled = tape.scale(logits, scale)?;
        let probs = tape.softmax_rows(scaled, mask.clone())?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let ctx = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    tape.matmul(ctx, lay.wo)
}

/// Residual + layer norm + GELU feed-forward + residual + layer norm.
fn sublayer_tail(tape: &mut Tape<f64>, x: TensorId, attn_out: TensorId, lay: &BoundLayer) -> Result<TensorId> {
    let a0 = tape.add(x, attn_out)?;
    let a = tape.layer_norm(a0, lay.ln1_gain, lay.ln1_bias, LN_EPS)?;
    let f1 = tape.matmul(a, lay.ffn_w1)?;
    let f1b = tape.add_row_broadcast(f1, lay.ffn_b1)?;
    let g = tape.gelu(f1b)?;
    let f2 = tape.matmul(g, lay.ffn_w2)?;
    let f2b = tape.add_row_broadcast(f2, lay.ffn_b2)?;
    let y0 = tape.add(a, f2b)?;
    tape.layer_norm(y0, lay.ln2_gain, lay.ln2_bias, LN_EPS)
}

/// One transformer layer over the whole segment stack. `pad_mask` holds one
/// row of key liveness per segment; `pattern` decides each segment's keys.
#[allow(clippy::too_many_arguments)]
fn encoder_layer(
    tape: &mut Tape<f64>,
    h: TensorId,
    lay: &BoundLayer,
    k: usize,
    w: usize,
    pad_mask: &[Vec<bool>],
    pattern: InteractionPattern,
    cfg: &EncoderConfig,
    suppress_foreign: bool,
) -> Result<TensorId> {
    let q_full = tape.matmul(h, lay.wq)?;
    let k_full = tape.matmul(h, lay.wk)?;
    let v_full = tape.matmul(h, lay.wv)?;
    let proj = (q_full, k_full, v_full);

    let mut outs = Vec::with_capacity(k);
    for i in 0..k {
        let own: Vec<usize> = (i * w..(i + 1) * w).collect();
        let own_mask = &pad_mask[i];
        let attn_out = match pattern {
            InteractionPattern::MaxP | InteractionPattern::TransformerHead => {
                attention(tape, proj, &own, &own, own_mask, lay, cfg)?
            }
            InteractionPattern::SegmentInteraction => {
                let (kv_idx, kv_mask) = segint_keys(i, k, w, own_mask, suppress_foreign);
                attention(tape, proj, &own, &kv_idx, &kv_mask, lay, cfg)?
            }
            InteractionPattern::GlobalAttention => {
                // CLS row sees every position of every segment.
                let all: Vec<usize> = (0..k * w).collect();
                let flat_mask: Vec<bool> = pad_mask.concat();
                let cls_out = attention(tape, proj, &own[..1], &all, &flat_mask, lay, cfg)?;
                // Remaining rows see their segment plus all CLS keys.
                let (kv_idx, kv_mask) = segint_keys(i, k, w, own_mask, false);
                let body_out = attention(tape, proj, &own[1..], &kv_idx, &kv_mask, lay, cfg)?;
                tape.concat_rows(&[cls_out, body_out])?
            }
        };
        let x_i = tape.select_rows(h, &own)?;
        outs.push(sublayer_tail(tape, x_i, attn_out, lay)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat_rows(&outs)
    }
}

/// Encode a framed batch into its `[k × hidden_dim]` segment representations.
pub fn encode_segments(
    tape: &mut Tape<f64>,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    batch: &SegmentBatch,
) -> Result<TensorId> {
    encode_segments_opts(tape, enc, cfg, batch, false)
}

/// Like [`encode_segments`], with a diagnostics switch that masks the foreign
/// CLS keys of the `segint` pattern (the result must then match `maxp`).
pub(crate) fn encode_segments_opts(
    tape: &mut Tape<f64>,
    enc: &BoundEncoder,
    cfg: &EncoderConfig,
    batch: &SegmentBatch,
    suppress_foreign: bool,
) -> Result<TensorId> {
    let k = batch.num_segments;
    let w = batch.width;
    let mut h = embed_inputs(tape, enc, cfg, batch)?;
    for lay in &enc.layers {
        h = encoder_layer(
            tape,
            h,
            lay,
            k,
            w,
            &batch.pad_mask,
            cfg.interaction_pattern,
            cfg,
            suppress_foreign,
        )?;
    }
    let cls_idx: Vec<usize> = (0..k).map(|i| i * w).collect();
    let mut cls = tape.select_rows(h, &cls_idx)?;
    if let Some(head) = &enc.head {
        // One standard layer over the k CLS vectors, all positions live.
        let head_mask = vec![vec![true; k]];
        cls = encoder_layer(tape, cls, head, 1, k, &head_mask, InteractionPattern::MaxP, cfg, false)?;
    }
    let proj = tape.matmul(cls, enc.cls_w)?;
    tape.add_row_broadcast(proj, enc.cls_b)
}

/// Encode one document into its segment vectors (forward only).
pub fn encode_document(model: &BiEncoder, doc: &Record) -> Result<Vec<Vec<f64>>> {
    let batch = split_document(doc, &model.config)?;
    let mut tape = Tape::new();
    let enc = bind_tower(&mut tape, model.doc_tower(), false)?;
    let segs = encode_segments(&mut tape, &enc, &model.config, &batch)?;
    let (_, d) = tape.shape(segs);
    Ok(tape.value(segs).chunks(d).map(|r| r.to_vec()).collect())
}

/// Encode one query into a single vector (forward only).
pub fn encode_query(model: &BiEncoder, query: &Record) -> Result<Vec<f64>> {
    let batch = query_batch(query, &model.config)?;
    let mut tape = Tape::new();
    let enc = bind_tower(&mut tape, model.query_tower(), false)?;
    let segs = encode_segments(&mut tape, &enc, &model.config, &batch)?;
    Ok(tape.value(segs).to_vec())
}

/// Mean pairwise cosine distance between a document's segment vectors:
/// 0 for a single segment, up to 2 for antipodal pairs. Zero-norm vectors
/// are a contract violation.
pub fn segment_dispersion(segs: &[Vec<f64>]) -> Result<f64> {
    if segs.is_empty() {
        return Err(SedrError::Contract("segment_dispersion: no segments".into()));
    }
    for (i, s) in segs.iter().enumerate() {
        if l2_norm(s) == 0.0 {
            return Err(SedrError::Contract(format!(
                "segment_dispersion: segment {i} has zero norm"
            )));
        }
    }
    let k = segs.len();
    if k == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            total += 1.0 - cosine(&segs[i], &segs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::corpus::Record;
    use crate::encoder::params::EncoderRole;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(pattern: InteractionPattern) -> EncoderConfig {
        let mut cfg = EncoderConfig::tiny();
        cfg.interaction_pattern = pattern;
        cfg
    }

    fn doc_with(n: usize) -> Record {
        Record {
            id: 11,
            token_ids: (0..n).map(|i| 3 + (i % 200) as u32).collect(),
        }
    }

    fn encode_bits(model: &BiEncoder, doc: &Record) -> Vec<u64> {
        encode_document(model, doc)
            .unwrap()
            .iter()
            .flatten()
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn embedding_offsets_identical_segments_by_segment_embedding() {
        let cfg = tiny(InteractionPattern::MaxP);
        let model = BiEncoder::new(&cfg, 5).unwrap();
        // two identical full segments
        let m = cfg.segment_body_len;
        let mut tokens = Vec::new();
        for _ in 0..2 {
            tokens.extend((0..m).map(|i| 3 + i as u32));
        }
        let batch = split_document(&Record { id: 1, token_ids: tokens }, &cfg).unwrap();
        assert_eq!(batch.num_segments, 2);

        let mut tape = Tape::new();
        let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
        let h0 = embed_inputs(&mut tape, &enc, &cfg, &batch).unwrap();
        let d = cfg.hidden_dim;
        let w = batch.width;
        let h = tape.value(h0);
        let seg = &model.doc_tower().params()[2];
        for p in 0..w {
            for j in 0..d {
                let diff = h[(w + p) * d + j] - h[p * d + j];
                let expected = seg.data[d + j] - seg.data[j];
                assert!(
                    (diff - expected).abs() < 1e-15,
                    "position {p} dim {j}: {diff} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn zero_embedding_tables_give_zero_rows() {
        let cfg = tiny(InteractionPattern::MaxP);
        let mut model = BiEncoder::new(&cfg, 5).unwrap();
        for p in model.all_params_mut() {
            if p.name.ends_with("_embedding") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let batch = split_document(&doc_with(5), &cfg).unwrap();
        let mut tape = Tape::new();
        let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
        let h0 = embed_inputs(&mut tape, &enc, &cfg, &batch).unwrap();
        assert!(tape.value(h0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_token_is_a_contract_error() {
        let cfg = tiny(InteractionPattern::MaxP);
        let model = BiEncoder::new(&cfg, 5).unwrap();
        let doc = Record { id: 1, token_ids: vec![3, 4, 9999] };
        let err = encode_document(&model, &doc).unwrap_err();
        assert!(matches!(err, SedrError::Contract(_)));
    }

    #[test]
    fn zeroed_query_key_projections_give_uniform_attention() {
        let cfg = tiny(InteractionPattern::MaxP);
        let mut model = BiEncoder::new(&cfg, 5).unwrap();
        for p in model.all_params_mut() {
            if p.name == "doc.layer0.wq" || p.name == "doc.layer0.wk" {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // one full and one padded segment
        let batch = split_document(&doc_with(cfg.segment_body_len + 3), &cfg).unwrap();
        let mut tape = Tape::new();
        let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
        encode_segments(&mut tape, &enc, &cfg, &batch).unwrap();

        // layer 0 creates the first k * num_heads softmax nodes
        let nodes = tape.softmax_nodes();
        for &node in nodes.iter().take(batch.num_segments * cfg.num_heads) {
            let (rows, cols) = tape.shape(node);
            let v = tape.value(node);
            for r in 0..rows {
                let row = &v[r * cols..(r + 1) * cols];
                let live: Vec<f64> = row.iter().copied().filter(|&x| x > 0.0).collect();
                let expect = 1.0 / live.len() as f64;
                for x in live {
                    assert!((x - expect).abs() < 1e-12, "weight {x} vs uniform {expect}");
                }
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one_for_every_pattern() {
        for pattern in InteractionPattern::ALL {
            let cfg = tiny(pattern);
            let model = BiEncoder::new(&cfg, 7).unwrap();
            let batch = split_document(&doc_with(3 * cfg.segment_body_len + 5), &cfg).unwrap();
            let mut tape = Tape::new();
            let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
            encode_segments(&mut tape, &enc, &cfg, &batch).unwrap();
            let (count, dev) = tape.softmax_row_sum_deviation();
            assert!(count > 0);
            assert!(dev < 1e-12, "{pattern}: row-sum deviation {dev}");
        }
    }

    #[test]
    fn segment_interaction_widens_keys_by_k_minus_one() {
        // Full-length segment rows: 4 segments of 512 body tokens means
        // 514 query rows against 517 keys per segment.
        let cfg = EncoderConfig {
            vocab_size: 600,
            hidden_dim: 8,
            num_heads: 1,
            num_layers: 1,
            ffn_dim: 16,
            segment_body_len: 512,
            max_segments: 4,
            interaction_pattern: InteractionPattern::SegmentInteraction,
            tied_encoders: false,
        };
        let model = BiEncoder::new(&cfg, 2).unwrap();
        let batch = split_document(&doc_with(2048), &cfg).unwrap();
        let mut tape = Tape::new();
        let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
        encode_segments(&mut tape, &enc, &cfg, &batch).unwrap();
        for node in tape.softmax_nodes() {
            assert_eq!(tape.shape(node), (514, 517));
        }
    }

    #[test]
    fn interactive_patterns_reduce_to_maxp_at_k1() {
        let doc = doc_with(7); // single segment
        for pattern in [
            InteractionPattern::SegmentInteraction,
            InteractionPattern::GlobalAttention,
        ] {
            let cfg_a = tiny(InteractionPattern::MaxP);
            let mut cfg_b = cfg_a.clone();
            cfg_b.interaction_pattern = pattern;
            let model_a = BiEncoder::new(&cfg_a, 21).unwrap();
            let mut model_b = BiEncoder::new(&cfg_b, 0).unwrap();
            // same weights, different pattern
            for (dst, src) in model_b
                .all_params_mut()
                .into_iter()
                .zip(model_a.all_params())
            {
                dst.data.copy_from_slice(&src.data);
            }
            assert_eq!(
                encode_bits(&model_a, &doc),
                encode_bits(&model_b, &doc),
                "{pattern} must equal maxp bitwise at k=1"
            );
        }
    }

    #[test]
    fn masking_foreign_cls_keys_reproduces_maxp() {
        let cfg_maxp = tiny(InteractionPattern::MaxP);
        let cfg_int = tiny(InteractionPattern::SegmentInteraction);
        let model = BiEncoder::new(&cfg_maxp, 13).unwrap();
        let doc = doc_with(3 * cfg_maxp.segment_body_len + 4);
        let batch = split_document(&doc, &cfg_maxp).unwrap();

        let run = |cfg: &EncoderConfig, suppress: bool| {
            let mut tape = Tape::new();
            let enc = bind_tower(&mut tape, model.doc_tower(), false).unwrap();
            let segs = encode_segments_opts(&mut tape, &enc, cfg, &batch, suppress).unwrap();
            tape.value(segs).to_vec()
        };

        let maxp = run(&cfg_maxp, false);
        let masked_int = run(&cfg_int, true);
        for (a, b) in maxp.iter().zip(&masked_int) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // sanity: without masking the patterns genuinely differ
        let live_int = run(&cfg_int, false);
        assert!(maxp.iter().zip(&live_int).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn maxp_outputs_swap_when_segments_and_their_embeddings_swap() {
        let cfg = tiny(InteractionPattern::MaxP);
        let m = cfg.segment_body_len;
        let seg_a: Vec<u32> = (0..m).map(|i| 3 + i as u32).collect();
        let seg_b: Vec<u32> = (0..m).map(|i| 50 + i as u32).collect();

        let model = BiEncoder::new(&cfg, 31).unwrap();
        let mut swapped = model.clone();
        for p in swapped.all_params_mut() {
            if p.name == "doc.seg_embedding" {
                let d = cfg.hidden_dim;
                for j in 0..d {
                    p.data.swap(j, d + j);
                }
            }
        }

        let ab = Record { id: 1, token_ids: [seg_a.clone(), seg_b.clone()].concat() };
        let ba = Record { id: 1, token_ids: [seg_b, seg_a].concat() };
        let out_ab = encode_document(&model, &ab).unwrap();
        let out_ba = encode_document(&swapped, &ba).unwrap();
        assert_eq!(out_ab.len(), 2);
        assert_eq!(out_ab[0], out_ba[1]);
        assert_eq!(out_ab[1], out_ba[0]);
    }

    #[test]
    fn encoding_is_deterministic_and_has_hidden_dim_width() {
        for pattern in InteractionPattern::ALL {
            let cfg = tiny(pattern);
            let model = BiEncoder::new(&cfg, 3).unwrap();
            let doc = doc_with(2 * cfg.segment_body_len + 3);
            let a = encode_document(&model, &doc).unwrap();
            assert_eq!(a.len(), 3);
            assert!(a.iter().all(|v| v.len() == cfg.hidden_dim));
            assert_eq!(encode_bits(&model, &doc), encode_bits(&model, &doc));
        }
    }

    #[test]
    fn query_encoding_matches_single_segment_document_with_shared_tower() {
        let mut cfg = tiny(InteractionPattern::SegmentInteraction);
        cfg.tied_encoders = true;
        let model = BiEncoder::new(&cfg, 17).unwrap();
        let tokens: Vec<u32> = vec![3, 9, 27, 81];
        let rec = Record { id: 4, token_ids: tokens };
        let q = encode_query(&model, &rec).unwrap();
        let d = encode_document(&model, &rec).unwrap();
        assert_eq!(d.len(), 1);
        let qb: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
        let db: Vec<u64> = d[0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(qb, db);
    }

    #[test]
    fn head_pattern_runs_an_extra_layer_over_cls_rows() {
        let cfg_head = tiny(InteractionPattern::TransformerHead);
        let cfg_maxp = tiny(InteractionPattern::MaxP);
        let head_model = BiEncoder::new(&cfg_head, 19).unwrap();
        let mut maxp_model = BiEncoder::new(&cfg_maxp, 19).unwrap();
        // Copy the shared weights (maxp lacks the head layer params).
        let by_name: std::collections::HashMap<String, Vec<f64>> = head_model
            .all_params()
            .iter()
            .map(|p| (p.name.clone(), p.data.clone()))
            .collect();
        for p in maxp_model.all_params_mut() {
            p.data.copy_from_slice(&by_name[&p.name]);
        }
        let doc = doc_with(2 * cfg_head.segment_body_len);
        let a = encode_document(&head_model, &doc).unwrap();
        let b = encode_document(&maxp_model, &doc).unwrap();
        // same stacks below, but the extra layer must change the output
        assert_ne!(a, b);
    }

    #[test]
    fn dispersion_hand_values() {
        let e = |v: Vec<f64>| v;
        assert_eq!(
            segment_dispersion(&[e(vec![1.0, 0.0]), e(vec![1.0, 0.0])]).unwrap(),
            0.0
        );
        assert!(
            (segment_dispersion(&[e(vec![1.0, 0.0]), e(vec![0.0, 1.0])]).unwrap() - 1.0).abs()
                < 1e-15
        );
        assert!(
            (segment_dispersion(&[e(vec![1.0, 0.0]), e(vec![-1.0, 0.0])]).unwrap() - 2.0).abs()
                < 1e-15
        );
        assert_eq!(segment_dispersion(&[e(vec![0.5, 0.5])]).unwrap(), 0.0);
        assert!(segment_dispersion(&[e(vec![0.0, 0.0]), e(vec![1.0, 0.0])]).is_err());
    }

    #[test]
    fn three_orthogonal_segments_average_pairwise_distance() {
        let segs = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.5],
        ];
        assert!((segment_dispersion(&segs).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn encoder_gradients_match_finite_differences_for_every_pattern() {
        for pattern in InteractionPattern::ALL {
            let cfg = EncoderConfig {
                vocab_size: 32,
                hidden_dim: 8,
                num_heads: 2,
                num_layers: 1,
                ffn_dim: 16,
                segment_body_len: 3,
                max_segments: 3,
                interaction_pattern: pattern,
                tied_encoders: true,
            };
            cfg.validate().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let tower = ModelParameters::new(&cfg, EncoderRole::Document, &mut rng);
            let batch =
                split_document(&Record { id: 1, token_ids: (3..10).collect() }, &cfg).unwrap();
            let mut params = tower.params().to_vec();
            let report = crate::numerics::grad_check(
                &mut params,
                |ps, tape| {
                    let t = ModelParameters::from_entries(&cfg, EncoderRole::Document, ps.to_vec())?;
                    let enc = bind_tower(tape, &t, true)?;
                    let segs = encode_segments(tape, &enc, &cfg, &batch)?;
                    let loss = tape.sum_all(segs)?;
                    Ok((loss, enc.leaves))
                },
                1e-5,
                60,
                7,
            )
            .unwrap();
            assert!(
                report.max_rel_error < 1e-4,
                "{pattern}: max rel error {} at {}[{}]",
                report.max_rel_error,
                report.worst_param,
                report.worst_index
            );
        }
    }

    #[test]
    fn bound_tower_leaf_order_matches_declaration_order() {
        let cfg = tiny(InteractionPattern::TransformerHead);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tower = ModelParameters::new(&cfg, EncoderRole::Document, &mut rng);
        let mut tape = Tape::new();
        let enc = bind_tower(&mut tape, &tower, true).unwrap();
        assert_eq!(enc.leaves.len(), tower.params().len());
        for (leaf, p) in enc.leaves.iter().zip(tower.params()) {
            assert_eq!(tape.value(*leaf), &p.data[..], "{} bound out of order", p.name);
        }
    }
}
