//! Incremental decoding with a key/value cache, greedy and beam search.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::forward::START;
use super::Model;
use crate::attention::{attend, AttentionPlan};
use crate::error::{Error, Result};
use crate::numerics::ops::{self, log_softmax_row};
use crate::numerics::{NdArray, ParamId};
use crate::tokenizer::{TokenId, EOS, PAD};

/// Encoder output projected into per-layer cross-attention keys and values.
#[derive(Debug, Clone)]
pub struct EncoderMemory {
    len: usize,
    cross: Vec<(NdArray, NdArray)>,
}

impl EncoderMemory {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Self-attention cache of one partial decoder sequence.
#[derive(Debug, Clone)]
pub struct DecoderState {
    kv: Vec<(NdArray, NdArray)>,
    pos: usize,
}

impl DecoderState {
    /// Tokens fed so far, start symbol included.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamCandidate {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Sum of token log-probabilities (EOS included when finished).
    pub log_prob: f64,
    /// `log_prob` divided by the generated length, EOS counted.
    pub score: f64,
    pub finished: bool,
}

impl BeamCandidate {
    fn new(tokens: Vec<TokenId>, log_prob: f64, finished: bool) -> Self {
        let len = (tokens.len() + usize::from(finished)).max(1);
        Self {
            score: log_prob / len as f64,
            tokens,
            log_prob,
            finished,
        }
    }
}

fn rank(a: &BeamCandidate, b: &BeamCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.finished.cmp(&a.finished))
}

struct Hyp {
    tokens: Vec<TokenId>,
    log_prob: f64,
    state: DecoderState,
    next: Vec<f64>,
}

fn log_probs(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    log_softmax_row(logits, &mut out);
    out
}

impl Model {
    fn w(&self, id: ParamId) -> &NdArray {
        self.params.get(id)
    }

    fn row_matmul(&self, x: &NdArray, id: ParamId) -> Result<NdArray> {
        ops::matmul(x, self.w(id))
    }

    pub fn memory_from_states(&self, states: &NdArray) -> Result<EncoderMemory> {
        let cross = self
            .layout
            .decoder
            .iter()
            .map(|l| Ok((self.row_matmul(states, l.cross_attn.k)?, self.row_matmul(states, l.cross_attn.v)?)))
            .collect::<Result<_>>()?;
        Ok(EncoderMemory {
            len: states.rows(),
            cross,
        })
    }

    pub fn encoder_memory(&self, source: &[TokenId]) -> Result<EncoderMemory> {
        let states = self.encode(source, None)?;
        self.memory_from_states(&states)
    }

    pub fn decoder_start(&self) -> DecoderState {
        let w = self.config.inner_width();
        DecoderState {
            kv: self
                .layout
                .decoder
                .iter()
                .map(|_| (NdArray::zeros(&[0, w]), NdArray::zeros(&[0, w])))
                .collect(),
            pos: 0,
        }
    }

    /// Feeds one token and returns the logits for the next position.
    pub fn decoder_step(&self, memory: &EncoderMemory, state: &mut DecoderState, token: TokenId) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if token as usize >= cfg.vocab_size {
            return Err(Error::InvalidArgument(format!("token id {token} outside vocabulary")));
        }
        let pos = state.pos;
        self.check_len(pos + 1, "decoder input")?;
        let d = cfg.d_model;
        let table = self.w(self.layout.embedding);
        let mut x = NdArray::new(vec![1, d], table.row(token as usize).to_vec())?;
        let self_plan = AttentionPlan::dense(1, pos + 1, true, pos, None).with_relative_buckets(&cfg.decoder_relpos(), pos, pos + 1);
        let cross_plan = AttentionPlan::dense(1, memory.len, false, pos, None);
        let cross_plan = match self.layout.cross_bias {
            Some(_) => cross_plan.with_relative_buckets(&cfg.cross_relpos(), pos, memory.len),
            None => cross_plan,
        };
        let self_bias = self.w(self.layout.decoder_bias);
        let cross_bias = self.layout.cross_bias.map(|b| self.w(b));
        for (l, layer) in self.layout.decoder.iter().enumerate() {
            let h = ops::rms_norm(&x, self.w(layer.self_norm))?;
            let q = self.row_matmul(&h, layer.self_attn.q)?;
            let (ks, vs) = &mut state.kv[l];
            ks.append_rows(&self.row_matmul(&h, layer.self_attn.k)?)?;
            vs.append_rows(&self.row_matmul(&h, layer.self_attn.v)?)?;
            let a = attend(&q, ks, vs, cfg.heads, &self_plan, Some(self_bias), None)?;
            x.add_assign(&self.row_matmul(&a.output, layer.self_attn.o)?);

            let h = ops::rms_norm(&x, self.w(layer.cross_norm))?;
            let q = self.row_matmul(&h, layer.cross_attn.q)?;
            let (mk, mv) = &memory.cross[l];
            let a = attend(&q, mk, mv, cfg.heads, &cross_plan, cross_bias, None)?;
            x.add_assign(&self.row_matmul(&a.output, layer.cross_attn.o)?);

            let h = ops::rms_norm(&x, self.w(layer.ffn_norm))?;
            let h = ops::relu(&self.row_matmul(&h, layer.ffn_in)?);
            x.add_assign(&self.row_matmul(&h, layer.ffn_out)?);
        }
        let x = ops::rms_norm(&x, self.w(self.layout.decoder_norm))?;
        state.pos += 1;
        Ok(self.row_matmul(&x, self.layout.lm_head)?.into_data())
    }

    fn greedy_candidate(&self, memory: &EncoderMemory, max_new: usize) -> Result<BeamCandidate> {
        let mut state = self.decoder_start();
        let mut lp = log_probs(&self.decoder_step(memory, &mut state, START)?);
        let mut tokens = Vec::new();
        let mut total = 0.0;
        for step in 0..max_new {
            let mut best = 0usize;
            for t in 0..lp.len() {
                if t != PAD as usize && (best == PAD as usize || lp[t] > lp[best]) {
                    best = t;
                }
            }
            total += lp[best];
            if best == EOS as usize {
                return Ok(BeamCandidate::new(tokens, total, true));
            }
            tokens.push(best as TokenId);
            if step + 1 < max_new {
                lp = log_probs(&self.decoder_step(memory, &mut state, best as TokenId)?);
            }
        }
        Ok(BeamCandidate::new(tokens, total, false))
    }

    /// Argmax decoding (lowest id wins ties); EOS is not included in the output.
    pub fn generate_greedy(&self, source: &[TokenId], max_new: usize) -> Result<Vec<TokenId>> {
        if max_new == 0 {
            return Err(Error::InvalidArgument("max_new must be >= 1".into()));
        }
        let memory = self.encoder_memory(source)?;
        Ok(self.greedy_candidate(&memory, max_new)?.tokens)
    }

    /// Beam search returning exactly `n_beams` candidates ordered by
    /// length-normalized log-probability.
    pub fn generate_beam(&self, source: &[TokenId], n_beams: usize, max_new: usize) -> Result<Vec<BeamCandidate>> {
        if n_beams == 0 || max_new == 0 {
            return Err(Error::InvalidArgument("n_beams and max_new must be >= 1".into()));
        }
        let memory = self.encoder_memory(source)?;
        let mut state = self.decoder_start();
        let next = log_probs(&self.decoder_step(&memory, &mut state, START)?);
        let mut alive = vec![Hyp {
            tokens: Vec::new(),
            log_prob: 0.0,
            state,
            next,
        }];
        let mut finished: Vec<BeamCandidate> = Vec::new();
        for step in 0..max_new {
            let mut cands: Vec<(usize, TokenId, f64)> = Vec::with_capacity(alive.len() * self.config.vocab_size);
            for (hi, h) in alive.iter().enumerate() {
                for (t, &lp) in h.next.iter().enumerate() {
                    if t != PAD as usize {
                        cands.push((hi, t as TokenId, h.log_prob + lp));
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then_with(|| alive[a.0].tokens.cmp(&alive[b.0].tokens))
                    .then_with(|| a.1.cmp(&b.1))
            });
            let mut chosen = Vec::with_capacity(n_beams);
            for (rank, &(hi, t, lp)) in cands.iter().enumerate() {
                if rank < n_beams && t == EOS {
                    finished.push(BeamCandidate::new(alive[hi].tokens.clone(), lp, true));
                } else if t != EOS && chosen.len() < n_beams {
                    chosen.push((hi, t, lp));
                } else if rank >= n_beams && chosen.len() >= n_beams {
                    break;
                }
            }
            if finished.len() >= n_beams {
                alive.clear();
                break;
            }
            let last = step + 1 == max_new;
            alive = chosen
                .par_iter()
                .map(|&(hi, t, lp)| {
                    let parent = &alive[hi];
                    let mut tokens = parent.tokens.clone();
                    tokens.push(t);
                    let mut state = parent.state.clone();
                    let next = if last {
                        Vec::new()
                    } else {
                        log_probs(&self.decoder_step(&memory, &mut state, t)?)
                    };
                    Ok(Hyp {
                        tokens,
                        log_prob: lp,
                        state,
                        next,
                    })
                })
                .collect::<Result<_>>()?;
        }
        let mut pool = finished;
        pool.extend(alive.into_iter().map(|h| BeamCandidate::new(h.tokens, h.log_prob, false)));
        let greedy = self.greedy_candidate(&memory, max_new)?;
        if !pool.iter().any(|c| c.tokens == greedy.tokens && c.finished == greedy.finished) {
            pool.push(greedy);
        }
        pool.sort_by(rank);
        pool.truncate(n_beams);
        Ok(pool)
    }

    /// Score of a given continuation under the beam scoring rule.
    pub fn sequence_score(&self, source: &[TokenId], tokens: &[TokenId], finished: bool) -> Result<f64> {
        let mut target = tokens.to_vec();
        if finished {
            target.push(EOS);
        }
        if target.is_empty() {
            return Ok(0.0);
        }
        let logits = self.teacher_forced_logits(source, &target)?;
        let mut total = 0.0;
        let mut lp = vec![0.0; logits.cols()];
        for (i, &t) in target.iter().enumerate() {
            log_softmax_row(logits.row(i), &mut lp);
            total += lp[t as usize];
        }
        Ok(total / target.len() as f64)
    }
}
