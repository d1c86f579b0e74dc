//! Graph-building forward passes shared by training and evaluation.

use std::collections::HashMap;
use std::rc::Rc;

use super::{AttnParams, Model};
use crate::attention::{block_ranges, AttentionPlan, AttnMode};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, Var};
use crate::tokenizer::{TokenId, PAD};

/// Decoder start symbol (PAD doubles as start).
pub const START: TokenId = PAD;

/// Which parameters collect gradients.
#[derive(Debug, Clone, Copy)]
pub enum Trainable<'a> {
    None,
    All,
    /// Indexed by parameter id.
    Mask(&'a [bool]),
}

impl Trainable<'_> {
    pub fn contains(&self, id: ParamId) -> bool {
        match self {
            Trainable::None => false,
            Trainable::All => true,
            Trainable::Mask(m) => m.get(id.0).copied().unwrap_or(false),
        }
    }
}

pub struct Forward<'g, 'p> {
    g: &'g mut Graph<'p>,
    model: &'p Model,
    trainable: Trainable<'g>,
    vars: HashMap<ParamId, Var>,
}

impl<'g, 'p> Forward<'g, 'p> {
    pub fn new(g: &'g mut Graph<'p>, model: &'p Model, trainable: Trainable<'g>) -> Self {
        Self {
            g,
            model,
            trainable,
            vars: HashMap::new(),
        }
    }

    pub fn graph(&mut self) -> &mut Graph<'p> {
        self.g
    }

    fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.vars.get(&id) {
            return v;
        }
        let v = self.g.param(&self.model.params, id, self.trainable.contains(id));
        self.vars.insert(id, v);
        v
    }

    fn linear(&mut self, x: Var, w: ParamId) -> Result<Var> {
        let w = self.p(w);
        self.g.matmul(x, w)
    }

    fn norm(&mut self, x: Var, gain: ParamId) -> Result<Var> {
        let gain = self.p(gain);
        self.g.rms_norm(x, gain)
    }

    fn embed(&mut self, tokens: &[TokenId]) -> Result<Var> {
        let table = self.p(self.model.layout.embedding);
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.model.config.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {bad} outside vocabulary")));
        }
        let x = self.g.gather(table, &ids)?;
        Ok(self.g.dropout(x, self.model.config.dropout_rate))
    }

    fn ffn(&mut self, x: Var, norm: ParamId, w_in: ParamId, w_out: ParamId) -> Result<Var> {
        let h = self.norm(x, norm)?;
        let h = self.linear(h, w_in)?;
        let h = self.g.relu(h);
        let h = self.g.dropout(h, self.model.config.dropout_rate);
        let h = self.linear(h, w_out)?;
        self.g.add(x, h)
    }

    /// Multi-head attention sublayer. `globals` holds extra key/value source
    /// rows appended after the regular key rows.
    #[allow(clippy::too_many_arguments)]
    fn attend(
        &mut self,
        queries: Var,
        keys: Var,
        globals: Option<Var>,
        p: AttnParams,
        bias: Option<ParamId>,
        plan: Rc<AttentionPlan>,
        label: &str,
    ) -> Result<Var> {
        let q = self.linear(queries, p.q)?;
        let mut k = self.linear(keys, p.k)?;
        let mut v = self.linear(keys, p.v)?;
        if let Some(gx) = globals {
            let gk = self.linear(gx, p.k)?;
            let gv = self.linear(gx, p.v)?;
            k = self.g.concat_rows(&[k, gk])?;
            v = self.g.concat_rows(&[v, gv])?;
        }
        let bias = bias.map(|b| self.p(b));
        let cfg = &self.model.config;
        let out = self
            .g
            .attention(q, k, v, bias, cfg.heads, plan, cfg.dropout_rate, label)?;
        self.linear(out, p.o)
    }

    /// Final encoder states for `tokens`, of which the first `valid` are real.
    pub fn encode(&mut self, tokens: &[TokenId], valid: usize) -> Result<Var> {
        let model = self.model;
        let cfg = &model.config;
        let len = tokens.len();
        if len == 0 {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        model.check_len(len, "encoder input")?;
        let mask: Option<Vec<bool>> = (valid < len).then(|| (0..len).map(|i| i < valid).collect());
        let rel = cfg.encoder_relpos();
        let mut plans: HashMap<AttnMode, Rc<AttentionPlan>> = HashMap::new();
        let mut x = self.embed(tokens)?;
        for (l, layer) in model.layout.encoder.iter().enumerate() {
            let mode = cfg.encoder_mode(l);
            let blocks = match mode {
                AttnMode::SlidingGlobal { blocks, .. } => blocks.min(valid),
                _ => 0,
            };
            let plan = plans
                .entry(mode)
                .or_insert_with(|| {
                    let m = mask.as_deref();
                    let plan = match mode {
                        AttnMode::Dense => AttentionPlan::dense(len, len, false, 0, m),
                        AttnMode::Sliding { radius } => AttentionPlan::sliding(len, radius, m),
                        AttnMode::SlidingGlobal { radius, .. } => AttentionPlan::sliding_global(len, radius, blocks, m),
                    };
                    Rc::new(plan.with_relative_buckets(&rel, 0, len))
                })
                .clone();
            let h = self.norm(x, layer.attn_norm)?;
            let globals = if blocks > 0 {
                Some(self.g.block_mean(h, block_ranges(valid, blocks))?)
            } else {
                None
            };
            let a = self.attend(h, h, globals, layer.attn, Some(model.layout.encoder_bias), plan, &format!("encoder.{l}"))?;
            x = self.g.add(x, a)?;
            x = self.ffn(x, layer.ffn_norm, layer.ffn_in, layer.ffn_out)?;
        }
        let x = self.norm(x, model.layout.encoder_norm)?;
        Ok(self.g.dropout(x, cfg.dropout_rate))
    }

    /// Decoder logits `[len(input), vocab]` for an already shifted `input`
    /// attending over `memory`, whose first `memory_valid` rows are real.
    pub fn decode(&mut self, input: &[TokenId], memory: Var, memory_valid: usize) -> Result<Var> {
        let model = self.model;
        let cfg = &model.config;
        let t = input.len();
        model.check_len(t, "decoder input")?;
        let mem_len = self.g.value(memory).rows();
        let mem_mask: Option<Vec<bool>> = (memory_valid < mem_len).then(|| (0..mem_len).map(|i| i < memory_valid).collect());
        let self_plan = Rc::new(AttentionPlan::dense(t, t, true, 0, None).with_relative_buckets(&cfg.decoder_relpos(), 0, t));
        let cross_plan = AttentionPlan::dense(t, mem_len, false, 0, mem_mask.as_deref());
        let cross_plan = Rc::new(match model.layout.cross_bias {
            Some(_) => cross_plan.with_relative_buckets(&cfg.cross_relpos(), 0, mem_len),
            None => cross_plan,
        });
        let mut y = self.embed(input)?;
        for (l, layer) in model.layout.decoder.iter().enumerate() {
            let h = self.norm(y, layer.self_norm)?;
            let a = self.attend(h, h, None, layer.self_attn, Some(model.layout.decoder_bias), Rc::clone(&self_plan), &format!("decoder.{l}.self"))?;
            y = self.g.add(y, a)?;
            let h = self.norm(y, layer.cross_norm)?;
            let a = self.attend(h, memory, None, layer.cross_attn, model.layout.cross_bias, Rc::clone(&cross_plan), &format!("decoder.{l}.cross"))?;
            y = self.g.add(y, a)?;
            y = self.ffn(y, layer.ffn_norm, layer.ffn_in, layer.ffn_out)?;
        }
        let y = self.norm(y, model.layout.decoder_norm)?;
        let y = self.g.dropout(y, cfg.dropout_rate);
        self.linear(y, model.layout.lm_head)
    }

    /// Teacher-forced logits: decoder input is `[start] + target[..T-1]`.
    pub fn seq2seq_logits(&mut self, source: &[TokenId], target: &[TokenId]) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("empty target".into()));
        }
        let memory = self.encode(source, source.len())?;
        let mut input = Vec::with_capacity(target.len());
        input.push(START);
        input.extend_from_slice(&target[..target.len() - 1]);
        self.decode(&input, memory, source.len())
    }

    /// Mean token cross-entropy of `target` given `source`.
    pub fn seq2seq_loss(&mut self, source: &[TokenId], target: &[TokenId]) -> Result<Var> {
        let logits = self.seq2seq_logits(source, target)?;
        let ids: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        self.g.cross_entropy(logits, &ids, PAD as usize)
    }

    /// Unnormalized class scores `[1, n_classes]` from mean-pooled encoder states.
    pub fn classifier_logits(&mut self, tokens: &[TokenId]) -> Result<Var> {
        let head = self
            .model
            .layout
            .classifier
            .ok_or_else(|| Error::config("no classification head attached"))?;
        let states = self.encode(tokens, tokens.len())?;
        let pooled = self.g.mean_rows(states, 0..tokens.len())?;
        let logits = self.linear(pooled, head.weight)?;
        let b = self.p(head.bias);
        self.g.add_row(logits, b)
    }

    pub fn classification_loss(&mut self, tokens: &[TokenId], label: usize) -> Result<Var> {
        let logits = self.classifier_logits(tokens)?;
        self.g.cross_entropy(logits, &[label], usize::MAX)
    }
}
