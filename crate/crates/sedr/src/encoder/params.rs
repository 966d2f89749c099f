//! Parameter sets for the two encoder towers.

use super::config::{EncoderConfig, InteractionPattern};
use crate::error::{Result, SedrError};
use crate::numerics::Param;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which tower a parameter set belongs to. Only the document tower of the
/// `head` pattern owns the extra CLS-level transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderRole {
    Document,
    Query,
}

impl EncoderRole {
    fn prefix(&self) -> &'static str {
        match self {
            EncoderRole::Document => "doc",
            EncoderRole::Query => "query",
        }
    }
}

/// Indices of one transformer layer's parameters inside the entry list.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_w1: usize,
    pub ffn_b1: usize,
    pub ffn_w2: usize,
    pub ffn_b2: usize,
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
}

/// All trainable tensors of one encoder tower, in a fixed declaration order:
/// token/position/segment embeddings, the transformer layers, the optional
/// CLS-level head layer, then the CLS projection.
#[derive(Debug, Clone)]
pub struct ModelParameters {
    entries: Vec<Param>,
    pub(crate) tok: usize,
    pub(crate) pos: usize,
    pub(crate) seg: usize,
    pub(crate) layers: Vec<LayerIdx>,
    pub(crate) head: Option<LayerIdx>,
    pub(crate) cls_w: usize,
    pub(crate) cls_b: usize,
}

/// Standard deviation for Gaussian-initialized weights and embeddings.
const INIT_STD: f64 = 0.1;

enum InitKind {
    Normal,
    Zeros,
    Ones,
    /// Identity start for residual-path projections (value, output, CLS
    /// projection): each layer begins as a pass-through that mixes rows only
    /// through attention weights, so token identity reaches the CLS embedding
    /// from the first step and training refines rather than discovers it.
    Identity,
}

fn layer_specs(prefix: &str, name: &str, cfg: &EncoderConfig) -> Vec<(String, usize, usize, InitKind)> {
    let d = cfg.hidden_dim;
    let f = cfg.ffn_dim;
    let p = |field: &str| format!("{prefix}.{name}.{field}");
    vec![
        (p("wq"), d, d, InitKind::Normal),
        (p("wk"), d, d, InitKind::Normal),
        (p("wv"), d, d, InitKind::Identity),
        (p("wo"), d, d, InitKind::Identity),
        (p("ffn_w1"), d, f, InitKind::Normal),
        (p("ffn_b1"), 1, f, InitKind::Zeros),
        (p("ffn_w2"), f, d, InitKind::Normal),
        (p("ffn_b2"), 1, d, InitKind::Zeros),
        (p("ln1_gain"), 1, d, InitKind::Ones),
        (p("ln1_bias"), 1, d, InitKind::Zeros),
        (p("ln2_gain"), 1, d, InitKind::Ones),
        (p("ln2_bias"), 1, d, InitKind::Zeros),
    ]
}

fn tower_specs(cfg: &EncoderConfig, role: EncoderRole) -> Vec<(String, usize, usize, InitKind)> {
    let d = cfg.hidden_dim;
    let pre = role.prefix();
    let mut specs = vec![
        (format!("{pre}.tok_embedding"), cfg.vocab_size, d, InitKind::Normal),
        (format!("{pre}.pos_embedding"), cfg.frame_width(), d, InitKind::Normal),
        // Zero so no segment ordinal starts favored: queries are encoded at
        // ordinal 0, and a random ordinal-0 vector would hand every document's
        // first segment a uniform head start under max-pool scoring.
        (format!("{pre}.seg_embedding"), cfg.max_segments, d, InitKind::Zeros),
    ];
    for l in 0..cfg.num_layers {
        specs.extend(layer_specs(pre, &format!("layer{l}"), cfg));
    }
    if has_head_layer(cfg, role) {
        specs.extend(layer_specs(pre, "head_layer", cfg));
    }
    specs.push((format!("{pre}.cls_proj.w"), d, d, InitKind::Identity));
    specs.push((format!("{pre}.cls_proj.b"), 1, d, InitKind::Zeros));
    specs
}

fn has_head_layer(cfg: &EncoderConfig, role: EncoderRole) -> bool {
    role == EncoderRole::Document && cfg.interaction_pattern == InteractionPattern::TransformerHead
}

fn layer_idx(base: usize) -> LayerIdx {
    LayerIdx {
        wq: base,
        wk: base + 1,
        wv: base + 2,
        wo: base + 3,
        ffn_w1: base + 4,
        ffn_b1: base + 5,
        ffn_w2: base + 6,
        ffn_b2: base + 7,
        ln1_gain: base + 8,
        ln1_bias: base + 9,
        ln2_gain: base + 10,
        ln2_bias: base + 11,
    }
}

impl ModelParameters {
    /// Fresh Gaussian-initialized tower.
    pub fn new(cfg: &EncoderConfig, role: EncoderRole, rng: &mut ChaCha8Rng) -> ModelParameters {
        let entries = tower_specs(cfg, role)
            .into_iter()
            .map(|(name, rows, cols, kind)| match kind {
                InitKind::Normal => Param::normal(name, rows, cols, INIT_STD, rng),
                InitKind::Zeros => Param::zeros(name, rows, cols),
                InitKind::Ones => Param::ones(name, rows, cols),
                InitKind::Identity => Param::identity(name, rows),
            })
            .collect();
        Self::with_entries_unchecked(cfg, role, entries)
    }

    /// Rebuild a tower from loaded entries, validating names and shapes
    /// against the expected layout.
    pub fn from_entries(cfg: &EncoderConfig, role: EncoderRole, entries: Vec<Param>) -> Result<ModelParameters> {
        let specs = tower_specs(cfg, role);
        if entries.len() != specs.len() {
            return Err(SedrError::Format(format!(
                "{} tower expects {} parameters, found {}",
                role.prefix(),
                specs.len(),
                entries.len()
            )));
        }
        for (e, (name, rows, cols, _)) in entries.iter().zip(&specs) {
            if &e.name != name || e.rows() != *rows || e.cols() != *cols {
                return Err(SedrError::Format(format!(
                    "parameter mismatch: expected `{name}` {rows}x{cols}, found `{}` {}x{}",
                    e.name,
                    e.rows(),
                    e.cols()
                )));
            }
        }
        Ok(Self::with_entries_unchecked(cfg, role, entries))
    }

    fn with_entries_unchecked(cfg: &EncoderConfig, role: EncoderRole, entries: Vec<Param>) -> ModelParameters {
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            layers.push(layer_idx(3 + l * 12));
        }
        let mut next = 3 + cfg.num_layers * 12;
        let head = if has_head_layer(cfg, role) {
            let h = layer_idx(next);
            next += 12;
            Some(h)
        } else {
            None
        };
        ModelParameters {
            entries,
            tok: 0,
            pos: 1,
            seg: 2,
            layers,
            head,
            cls_w: next,
            cls_b: next + 1,
        }
    }

    /// Number of parameter tensors a tower with this configuration holds.
    pub fn layout_len(cfg: &EncoderConfig, role: EncoderRole) -> usize {
        3 + (cfg.num_layers + has_head_layer(cfg, role) as usize) * 12 + 2
    }

    pub fn params(&self) -> &[Param] {
        &self.entries
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.numel()).sum()
    }
}

/// The retrieval model: a document tower and a query tower (optionally one
/// shared tower when `tied_encoders` is set).
#[derive(Debug, Clone)]
pub struct BiEncoder {
    pub config: EncoderConfig,
    doc: ModelParameters,
    query: Option<ModelParameters>,
}

impl BiEncoder {
    /// Initialize both towers from one seed (document tower drawn first).
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<BiEncoder> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let doc = ModelParameters::new(cfg, EncoderRole::Document, &mut rng);
        let query = if cfg.tied_encoders {
            None
        } else {
            Some(ModelParameters::new(cfg, EncoderRole::Query, &mut rng))
        };
        Ok(BiEncoder {
            config: cfg.clone(),
            doc,
            query,
        })
    }

    pub fn from_towers(cfg: EncoderConfig, doc: ModelParameters, query: Option<ModelParameters>) -> Result<BiEncoder> {
        cfg.validate()?;
        if cfg.tied_encoders != query.is_none() {
            return Err(SedrError::Format(
                "tied flag disagrees with stored tower count".into(),
            ));
        }
        Ok(BiEncoder {
            config: cfg,
            doc,
            query,
        })
    }

    pub fn doc_tower(&self) -> &ModelParameters {
        &self.doc
    }

    /// Query tower (the document tower when encoders are tied).
    pub fn query_tower(&self) -> &ModelParameters {
        self.query.as_ref().unwrap_or(&self.doc)
    }

    pub fn is_tied(&self) -> bool {
        self.query.is_none()
    }

    /// All parameters in declaration order: document tower then query tower.
    pub fn all_params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.doc.params().iter().collect();
        if let Some(q) = &self.query {
            out.extend(q.params().iter());
        }
        out
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.doc.entries.iter_mut().collect();
        if let Some(q) = &mut self.query {
            out.extend(q.entries.iter_mut());
        }
        out
    }

    /// Total trainable scalar count.
    pub fn numel(&self) -> usize {
        self.doc.numel() + self.query.as_ref().map_or(0, |q| q.numel())
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declaration_order_is_stable_and_named() {
        let cfg = EncoderConfig::tiny();
        let enc = BiEncoder::new(&cfg, 1).unwrap();
        let names: Vec<&str> = enc.all_params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names[0], "doc.tok_embedding");
        assert_eq!(names[1], "doc.pos_embedding");
        assert_eq!(names[2], "doc.seg_embedding");
        assert_eq!(names[3], "doc.layer0.wq");
        let n_doc = 3 + cfg.num_layers * 12 + 2;
        assert_eq!(names[n_doc - 2], "doc.cls_proj.w");
        assert_eq!(names[n_doc], "query.tok_embedding");
        assert_eq!(names.len(), 2 * n_doc);
    }

    #[test]
    fn head_layer_exists_only_for_the_head_pattern_doc_tower() {
        let mut cfg = EncoderConfig::tiny();
        cfg.interaction_pattern = InteractionPattern::TransformerHead;
        let enc = BiEncoder::new(&cfg, 1).unwrap();
        assert!(enc.doc_tower().head.is_some());
        assert!(enc.query_tower().head.is_none());
        let names: Vec<String> = enc.all_params().iter().map(|p| p.name.clone()).collect();
        assert!(names.iter().any(|n| n == "doc.head_layer.wq"));
        assert!(!names.iter().any(|n| n == "query.head_layer.wq"));

        cfg.interaction_pattern = InteractionPattern::MaxP;
        let enc = BiEncoder::new(&cfg, 1).unwrap();
        assert!(enc.doc_tower().head.is_none());
    }

    #[test]
    fn same_seed_reproduces_identical_weights() {
        let cfg = EncoderConfig::tiny();
        let a = BiEncoder::new(&cfg, 9).unwrap();
        let b = BiEncoder::new(&cfg, 9).unwrap();
        for (pa, pb) in a.all_params().iter().zip(b.all_params()) {
            assert_eq!(pa.data, pb.data, "{} differs", pa.name);
        }
        let c = BiEncoder::new(&cfg, 10).unwrap();
        assert_ne!(
            a.all_params()[0].data,
            c.all_params()[0].data,
            "different seeds must differ"
        );
    }

    #[test]
    fn towers_are_disjoint_unless_tied() {
        let cfg = EncoderConfig::tiny();
        let enc = BiEncoder::new(&cfg, 3).unwrap();
        assert!(!enc.is_tied());
        assert_ne!(
            enc.doc_tower().params()[0].data,
            enc.query_tower().params()[0].data
        );

        let mut tied_cfg = cfg.clone();
        tied_cfg.tied_encoders = true;
        let tied = BiEncoder::new(&tied_cfg, 3).unwrap();
        assert!(tied.is_tied());
        assert_eq!(tied.all_params().len(), enc.all_params().len() / 2);
    }

    #[test]
    fn from_entries_rejects_wrong_shapes() {
        let cfg = EncoderConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tower = ModelParameters::new(&cfg, EncoderRole::Document, &mut rng);
        let mut entries: Vec<Param> = tower.params().to_vec();
        entries[0] = Param::zeros("doc.tok_embedding", 2, 2);
        let err = ModelParameters::from_entries(&cfg, EncoderRole::Document, entries).unwrap_err();
        assert!(matches!(err, SedrError::Format(_)));
    }
}
