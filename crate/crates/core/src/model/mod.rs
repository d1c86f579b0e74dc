//! Encoder-decoder Transformer with language-modeling and classification heads.

mod checkpoint;
mod config;
mod forward;
mod generate;

use rand_distr::{Distribution, Normal};

use crate::attention::maps::AttentionMap;
use crate::error::{Error, Result};
use crate::numerics::rng::rng_from;
use crate::numerics::{Graph, NdArray, ParamId, ParamStore};
use crate::tokenizer::TokenId;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, LoadedCheckpoint};
pub use config::{EncoderAttention, EncoderAttentionKind, ModelConfig, Preset};
pub use forward::{Forward, Trainable};
pub use generate::{BeamCandidate, DecoderState, EncoderMemory};

#[derive(Debug, Clone, Copy)]
pub struct AttnParams {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerParams {
    pub attn_norm: ParamId,
    pub attn: AttnParams,
    pub ffn_norm: ParamId,
    pub ffn_in: ParamId,
    pub ffn_out: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerParams {
    pub self_norm: ParamId,
    pub self_attn: AttnParams,
    pub cross_norm: ParamId,
    pub cross_attn: AttnParams,
    pub ffn_norm: ParamId,
    pub ffn_in: ParamId,
    pub ffn_out: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_classes: usize,
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub embedding: ParamId,
    pub encoder_bias: ParamId,
    pub decoder_bias: ParamId,
    pub cross_bias: Option<ParamId>,
    pub encoder: Vec<EncoderLayerParams>,
    pub encoder_norm: ParamId,
    pub decoder: Vec<DecoderLayerParams>,
    pub decoder_norm: ParamId,
    pub lm_head: ParamId,
    pub classifier: Option<ClassifierParams>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    seed: u64,
}

struct Init {
    rng: rand_chacha::ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> NdArray {
        let dist = Normal::new(0.0, std).expect("finite std");
        NdArray::from_fn(rows, cols, |_, _| dist.sample(&mut self.rng))
    }

    /// `[fan_in, fan_out]` matrix with std `1/sqrt(fan_in)`.
    fn matrix(&mut self, fan_in: usize, fan_out: usize) -> NdArray {
        self.normal(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }
}

fn attn_params(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize, w: usize) -> AttnParams {
    AttnParams {
        q: store.add(format!("{prefix}.q"), init.matrix(d, w), true),
        k: store.add(format!("{prefix}.k"), init.matrix(d, w), true),
        v: store.add(format!("{prefix}.v"), init.matrix(d, w), true),
        o: store.add(format!("{prefix}.o"), init.matrix(w, d), true),
    }
}

fn gain(store: &mut ParamStore, name: String, d: usize) -> ParamId {
    store.add(name, NdArray::full(&[d], 1.0), false)
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (d, w, f, v) = (config.d_model, config.inner_width(), config.d_ff, config.vocab_size);
        let mut init = Init {
            rng: rng_from(seed, &[0x1a17]),
        };
        let mut s = ParamStore::new();
        let table = || NdArray::zeros(&[config.heads, config.relative_buckets]);
        let embedding = s.add("embedding", init.normal(v, d, 1.0), true);
        let encoder_bias = s.add("encoder.relative_bias", table(), false);
        let decoder_bias = s.add("decoder.relative_bias", table(), false);
        let cross_bias = config
            .cross_attention_bias
            .then(|| s.add("cross.relative_bias", table(), false));
        let encoder = (0..config.n_encoder_layers)
            .map(|l| EncoderLayerParams {
                attn_norm: gain(&mut s, format!("encoder.{l}.attn_norm"), d),
                attn: attn_params(&mut s, &mut init, &format!("encoder.{l}.attn"), d, w),
                ffn_norm: gain(&mut s, format!("encoder.{l}.ffn_norm"), d),
                ffn_in: s.add(format!("encoder.{l}.ffn.in"), init.matrix(d, f), true),
                ffn_out: s.add(format!("encoder.{l}.ffn.out"), init.matrix(f, d), true),
            })
            .collect();
        let encoder_norm = gain(&mut s, "encoder.final_norm".into(), d);
        let decoder = (0..config.n_decoder_layers)
            .map(|l| DecoderLayerParams {
                self_norm: gain(&mut s, format!("decoder.{l}.self_norm"), d),
                self_attn: attn_params(&mut s, &mut init, &format!("decoder.{l}.self"), d, w),
                cross_norm: gain(&mut s, format!("decoder.{l}.cross_norm"), d),
                cross_attn: attn_params(&mut s, &mut init, &format!("decoder.{l}.cross"), d, w),
                ffn_norm: gain(&mut s, format!("decoder.{l}.ffn_norm"), d),
                ffn_in: s.add(format!("decoder.{l}.ffn.in"), init.matrix(d, f), true),
                ffn_out: s.add(format!("decoder.{l}.ffn.out"), init.matrix(f, d), true),
            })
            .collect();
        let decoder_norm = gain(&mut s, "decoder.final_norm".into(), d);
        let lm_head = s.add("lm_head", init.matrix(d, v), true);
        Ok(Self {
            config,
            params: s,
            layout: Layout {
                embedding,
                encoder_bias,
                decoder_bias,
                cross_bias,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
                lm_head,
                classifier: None,
            },
            seed,
        })
    }

    /// Adds a `d_model × n_classes` dense head. Re-attaching with the same
    /// class count is a no-op.
    pub fn attach_classifier(&mut self, n_classes: usize) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::config("classifier needs at least 2 classes"));
        }
        if let Some(c) = self.layout.classifier {
            if c.n_classes == n_classes {
                return Ok(());
            }
            return Err(Error::config(format!(
                "classifier already attached with {} classes",
                c.n_classes
            )));
        }
        let d = self.config.d_model;
        let mut init = Init {
            rng: rng_from(self.seed, &[0xc1a5, n_classes as u64]),
        };
        let weight = self.params.add("classifier.weight", init.matrix(d, n_classes), true);
        let bias = self.params.add("classifier.bias", NdArray::zeros(&[n_classes]), false);
        self.layout.classifier = Some(ClassifierParams {
            weight,
            bias,
            n_classes,
        });
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_classes(&self) -> Option<usize> {
        self.layout.classifier.map(|c| c.n_classes)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "{what} length {len} exceeds max_len {}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    /// Final encoder states `[L, d_model]`. `pad_mask[i]` is true for real
    /// tokens; padding must form a trailing run.
    pub fn encode(&self, tokens: &[TokenId], pad_mask: Option<&[bool]>) -> Result<NdArray> {
        let valid = valid_prefix(tokens.len(), pad_mask)?;
        let mut g = Graph::new();
        let mut fwd = Forward::new(&mut g, self, Trainable::None);
        let out = fwd.encode(tokens, valid)?;
        Ok(g.value(out).clone())
    }

    /// Logits `[len(prefix)+1, vocab]` for decoder input `[start] + prefix`;
    /// row `t` predicts target token `t`.
    pub fn decode_logits(&self, prefix: &[TokenId], encoder_states: &NdArray) -> Result<NdArray> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(forward::START);
        input.extend_from_slice(prefix);
        let mut g = Graph::new();
        let mem = g.constant(encoder_states.clone());
        let mut fwd = Forward::new(&mut g, self, Trainable::None);
        let logits = fwd.decode(&input, mem, encoder_states.rows())?;
        Ok(g.value(logits).clone())
    }

    /// Teacher-forced logits for `target` given `source`, `[len(target), vocab]`.
    pub fn teacher_forced_logits(&self, source: &[TokenId], target: &[TokenId]) -> Result<NdArray> {
        let mut g = Graph::new();
        let mut fwd = Forward::new(&mut g, self, Trainable::None);
        let logits = fwd.seq2seq_logits(source, target)?;
        Ok(g.value(logits).clone())
    }

    /// Class probabilities for one sequence.
    pub fn classify(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut fwd = Forward::new(&mut g, self, Trainable::None);
        let logits = fwd.classifier_logits(tokens)?;
        let mut row = g.value(logits).data().to_vec();
        crate::numerics::ops::softmax_in_place(&mut row);
        Ok(row)
    }

    /// Per-layer, per-head encoder self-attention maps, eval mode.
    pub fn export_attention_maps(&self, tokens: &[TokenId]) -> Result<Vec<AttentionMap>> {
        let mut g = Graph::new();
        g.record_attention(true);
        let mut fwd = Forward::new(&mut g, self, Trainable::None);
        fwd.encode(tokens, tokens.len())?;
        let recorded = g.take_recorded_attention();
        let mut maps = Vec::new();
        for (layer, rec) in recorded.iter().enumerate() {
            let mode = self.config.encoder_mode(layer);
            for head in 0..rec.heads {
                maps.push(AttentionMap::from_plan(layer, head, mode, &rec.plan, &rec.probs, rec.heads));
            }
        }
        Ok(maps)
    }
}

fn valid_prefix(len: usize, pad_mask: Option<&[bool]>) -> Result<usize> {
    let Some(mask) = pad_mask else {
        return Ok(len);
    };
    if mask.len() != len {
        return Err(Error::Shape {
            op: "pad_mask",
            left: vec![len],
            right: vec![mask.len()],
        });
    }
    let valid = mask.iter().take_while(|&&m| m).count();
    if mask[valid..].iter().any(|&m| m) {
        return Err(Error::InvalidArgument("padding must be a trailing run".into()));
    }
    Ok(valid)
}

#[cfg(test)]
mod tests;
