use serde::{Deserialize, Serialize};

use crate::attention::{AttnMode, LayerRadiusSchedule, RelativePosition};
use crate::error::{Error, Result};
use crate::tokenizer::VOCAB_SIZE;

/// How each encoder layer restricts self-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderAttentionKind {
    Dense,
    Sliding,
    SlidingGlobal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderAttention {
    pub kind: EncoderAttentionKind,
    /// One radius per encoder layer (ignored for dense).
    pub radii: Vec<usize>,
    /// Global block tokens per layer for `sliding_global`.
    pub global_blocks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    Base,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_kv: usize,
    pub d_ff: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub heads: usize,
    pub dropout_rate: f64,
    pub vocab_size: usize,
    pub max_len: usize,
    pub encoder_attention: EncoderAttention,
    pub relative_buckets: usize,
    pub relative_max_distance: usize,
    /// Adds a learned bidirectional relative-position bias to cross-attention,
    /// aligning decoder step `t` with encoder position `t`.
    pub cross_attention_bias: bool,
}

impl ModelConfig {
    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Toy => Self::toy(),
            Preset::Base => Self::full_size(3584, 8, 4, 12),
            Preset::Large => Self::full_size(3850, 24, 12, 16),
        }
    }

    pub fn toy() -> Self {
        let layers = 4;
        Self {
            d_model: 64,
            d_kv: 16,
            d_ff: 128,
            n_encoder_layers: layers,
            n_decoder_layers: 2,
            heads: 4,
            dropout_rate: 0.1,
            vocab_size: VOCAB_SIZE,
            max_len: 512,
            encoder_attention: EncoderAttention {
                kind: EncoderAttentionKind::SlidingGlobal,
                radii: LayerRadiusSchedule::split(layers, layers.div_ceil(2), 8, 16).radii,
                global_blocks: 4,
            },
            relative_buckets: 32,
            relative_max_distance: 128,
            cross_attention_bias: true,
        }
    }

    fn full_size(d_ff: usize, enc: usize, dec: usize, heads: usize) -> Self {
        Self {
            d_model: 1536,
            d_kv: 64,
            d_ff,
            n_encoder_layers: enc,
            n_decoder_layers: dec,
            heads,
            dropout_rate: 0.1,
            vocab_size: VOCAB_SIZE,
            max_len: 2048,
            encoder_attention: EncoderAttention {
                kind: EncoderAttentionKind::SlidingGlobal,
                radii: LayerRadiusSchedule::split(enc, 3, 64, 128).radii,
                global_blocks: 32,
            },
            relative_buckets: 32,
            relative_max_distance: 128,
            cross_attention_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.d_kv == 0 || self.d_ff == 0 || self.heads == 0 {
            return fail("d_model, d_kv, d_ff and heads must be positive".into());
        }
        if self.n_encoder_layers == 0 || self.n_decoder_layers == 0 {
            return fail("both stacks need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!("vocab_size must be {VOCAB_SIZE}"));
        }
        if self.max_len == 0 {
            return fail("max_len must be positive".into());
        }
        if self.relative_buckets < 2 || self.relative_max_distance < 1 {
            return fail("relative position settings out of range".into());
        }
        let enc = &self.encoder_attention;
        if enc.kind != EncoderAttentionKind::Dense {
            if enc.radii.len() != self.n_encoder_layers {
                return fail(format!(
                    "{} radii for {} encoder layers",
                    enc.radii.len(),
                    self.n_encoder_layers
                ));
            }
            for l in 0..self.n_encoder_layers {
                self.encoder_mode(l).validate()?;
            }
        }
        Ok(())
    }

    pub fn encoder_mode(&self, layer: usize) -> AttnMode {
        let enc = &self.encoder_attention;
        match enc.kind {
            EncoderAttentionKind::Dense => AttnMode::Dense,
            EncoderAttentionKind::Sliding => AttnMode::Sliding {
                radius: enc.radii[layer],
            },
            EncoderAttentionKind::SlidingGlobal => AttnMode::SlidingGlobal {
                radius: enc.radii[layer],
                blocks: enc.global_blocks,
            },
        }
    }

    pub fn inner_width(&self) -> usize {
        self.heads * self.d_kv
    }

    pub fn encoder_relpos(&self) -> RelativePosition {
        RelativePosition::new(self.relative_buckets, self.relative_max_distance, true)
    }

    pub fn decoder_relpos(&self) -> RelativePosition {
        RelativePosition::new(self.relative_buckets, self.relative_max_distance, false)
    }

    pub fn cross_relpos(&self) -> RelativePosition {
        RelativePosition::new(self.relative_buckets, self.relative_max_distance, true)
    }

    /// Parameters the built model will hold, excluding any classification head.
    pub fn parameter_count(&self) -> usize {
        let (d, w, f) = (self.d_model, self.inner_width(), self.d_ff);
        let attn = 4 * d * w;
        let ffn = 2 * d * f;
        let bias = self.heads * self.relative_buckets;
        let enc = self.n_encoder_layers * (attn + ffn + 2 * d) + d;
        let dec = self.n_decoder_layers * (2 * attn + ffn + 3 * d) + d;
        let tables = if self.cross_attention_bias { 3 * bias } else { 2 * bias };
        self.vocab_size * d * 2 + enc + dec + tables
    }
}
