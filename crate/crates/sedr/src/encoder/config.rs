//! Encoder architecture configuration and named profiles.

use crate::error::{Result, SedrError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How segments exchange information inside the encoder stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionPattern {
    /// Segments are encoded independently; the document score max-pools over
    /// their vectors.
    MaxP,
    /// Each layer lets every token of a segment attend to the other
    /// segments' CLS states taken from that layer's input.
    SegmentInteraction,
    /// Independent segment stacks plus one extra transformer layer over the
    /// final CLS vectors.
    TransformerHead,
    /// CLS tokens attend over all tokens of all segments; other tokens
    /// attend within their segment plus all CLS keys.
    GlobalAttention,
}

impl InteractionPattern {
    pub const ALL: [InteractionPattern; 4] = [
        InteractionPattern::MaxP,
        InteractionPattern::SegmentInteraction,
        InteractionPattern::TransformerHead,
        InteractionPattern::GlobalAttention,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            InteractionPattern::MaxP => "maxp",
            InteractionPattern::SegmentInteraction => "segint",
            InteractionPattern::TransformerHead => "head",
            InteractionPattern::GlobalAttention => "global",
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            InteractionPattern::MaxP => 0,
            InteractionPattern::SegmentInteraction => 1,
            InteractionPattern::TransformerHead => 2,
            InteractionPattern::GlobalAttention => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => InteractionPattern::MaxP,
            1 => InteractionPattern::SegmentInteraction,
            2 => InteractionPattern::TransformerHead,
            3 => InteractionPattern::GlobalAttention,
            other => {
                return Err(SedrError::Format(format!(
                    "unknown interaction pattern tag {other}"
                )))
            }
        })
    }
}

impl fmt::Display for InteractionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InteractionPattern {
    type Err = SedrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxp" => Ok(InteractionPattern::MaxP),
            "segint" => Ok(InteractionPattern::SegmentInteraction),
            "head" => Ok(InteractionPattern::TransformerHead),
            "global" => Ok(InteractionPattern::GlobalAttention),
            other => Err(SedrError::Config(format!(
                "unknown pattern `{other}`; expected maxp|segint|head|global"
            ))),
        }
    }
}

/// Architecture of one encoder tower (query and document towers share it).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    /// Tokens per segment body (CLS and SEP framing come on top).
    pub segment_body_len: usize,
    /// Hard cap on segments per document; longer documents are truncated.
    pub max_segments: usize,
    pub interaction_pattern: InteractionPattern,
    /// Share one parameter set between the query and document towers.
    pub tied_encoders: bool,
}

impl EncoderConfig {
    /// Smallest profile; used by gradient checks and fast unit tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            vocab_size: 256,
            hidden_dim: 16,
            num_heads: 2,
            num_layers: 2,
            ffn_dim: 64,
            segment_body_len: 16,
            max_segments: 4,
            interaction_pattern: InteractionPattern::SegmentInteraction,
            tied_encoders: false,
        }
    }

    /// Desk-scale profile: trains on a laptop CPU in minutes.
    pub fn desk() -> Self {
        EncoderConfig {
            vocab_size: 4096,
            hidden_dim: 64,
            num_heads: 4,
            num_layers: 4,
            ffn_dim: 256,
            segment_body_len: 32,
            max_segments: 4,
            interaction_pattern: InteractionPattern::SegmentInteraction,
            tied_encoders: false,
        }
    }

    /// Full-scale shape (512-token segments, BERT-base sized tower).
    /// Configurable but far beyond desk-scale budgets.
    pub fn paper() -> Self {
        EncoderConfig {
            vocab_size: 50000,
            hidden_dim: 768,
            num_heads: 12,
            num_layers: 12,
            ffn_dim: 3072,
            segment_body_len: 512,
            max_segments: 4,
            interaction_pattern: InteractionPattern::SegmentInteraction,
            tied_encoders: false,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(SedrError::Config(format!(
                "unknown profile `{other}`; expected tiny|desk|paper"
            ))),
        }
    }

    /// Width of one framed segment row: CLS + body + SEP.
    pub fn frame_width(&self) -> usize {
        self.segment_body_len + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(SedrError::Config(
                "vocab_size must be at least 4 (3 reserved ids + 1 real token)".into(),
            ));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return Err(SedrError::Config(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.num_layers == 0 {
            return Err(SedrError::Config("num_layers must be positive".into()));
        }
        if self.ffn_dim == 0 {
            return Err(SedrError::Config("ffn_dim must be positive".into()));
        }
        if self.segment_body_len == 0 {
            return Err(SedrError::Config("segment_body_len must be positive".into()));
        }
        if self.max_segments == 0 {
            return Err(SedrError::Config("max_segments must be positive".into()));
        }
        Ok(())
    }
}
