//! Span-corruption pretraining and masked-token evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spans::{corrupt_spans, Corrupted, SpanCorruptionSpec};
use super::trainer::{apply_update, batch_gradients, StepLog};
use crate::error::{Error, Result};
use crate::genomics_io::CleanCorpus;
use crate::model::{save_checkpoint, Model};
use crate::numerics::rng::rng_from;
use crate::numerics::schedule::DEFAULT_PEAK_LR;
use crate::numerics::{AdamWConfig, AdamWState, WarmupLinearSchedule};
use crate::tokenizer::{encode, is_byte};

const STREAM_CROPS: u64 = 0xc409;
const STREAM_EVAL: u64 = 0xe7a1;
const STREAM_SPLIT: u64 = 0x5b17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub crop_len: usize,
    pub peak_lr: f64,
    pub spans: SpanCorruptionSpec,
    pub seed: u64,
    /// Evaluate (and checkpoint) every this many steps; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub eval_crops: usize,
    pub optimizer: AdamWConfig,
    pub clip_norm: Option<f64>,
    /// Print progress to stderr every this many steps; 0 is silent.
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            crop_len: 512,
            peak_lr: DEFAULT_PEAK_LR,
            spans: SpanCorruptionSpec::default(),
            seed: 0,
            eval_interval: 0,
            eval_crops: 64,
            optimizer: AdamWConfig::default(),
            clip_norm: None,
            log_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.crop_len == 0 {
            return Err(Error::config("batch_size and crop_len must be positive"));
        }
        if !(self.peak_lr >= 0.0) {
            return Err(Error::config("peak_lr must be non-negative"));
        }
        self.spans.validate()
    }
}

/// Optimizer state and position of an interrupted run.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub optimizer: AdamWState,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub log: Vec<StepLog>,
    pub optimizer: AdamWState,
    pub final_step: usize,
    pub checkpoints: Vec<PathBuf>,
    pub final_accuracy: Option<MlmEval>,
}

/// Seeded 99:1 split by segment. A single-segment corpus has no heldout part.
pub fn split_heldout(corpus: &CleanCorpus, seed: u64) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let n = corpus.segments.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[STREAM_SPLIT]));
    let held = if n < 2 { 0 } else { ((n as f64) * 0.01).round().max(1.0) as usize };
    let (h, t) = order.split_at(held);
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| corpus.segments[i].clone()).collect()
    };
    (pick(t), pick(h))
}

/// A crop of `len` bases; the start is uniform over all valid positions of
/// the corpus, so segments are chosen in proportion to their crop count.
pub fn sample_crop<'a, R: Rng + ?Sized>(segments: &'a [Vec<u8>], len: usize, rng: &mut R) -> &'a [u8] {
    let weights: Vec<usize> = segments.iter().map(|s| s.len().saturating_sub(len) + 1).collect();
    let total: usize = weights.iter().sum();
    let mut r = rng.random_range(0..total);
    for (seg, w) in segments.iter().zip(weights) {
        if r < w {
            let end = (r + len).min(seg.len());
            return &seg[r..end];
        }
        r -= w;
    }
    unreachable!("crop index within total weight")
}

fn corrupted_crop(segments: &[Vec<u8>], cfg: &PretrainConfig, seed: u64, parts: &[u64]) -> Result<Corrupted> {
    let mut rng = rng_from(seed, parts);
    let crop = sample_crop(segments, cfg.crop_len, &mut rng);
    corrupt_spans(&encode(crop), &cfg.spans, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmEval {
    pub accuracy: f64,
    pub masked: usize,
    pub correct: usize,
}

/// Masked-token accuracy on corrupted heldout crops. Each masked token is
/// predicted greedily given the true target prefix (teacher forcing), with
/// the argmax taken over the byte alphabet occurring in `heldout`; sentinel
/// and EOS positions are not counted.
pub fn mlm_accuracy(model: &Model, heldout: &[Vec<u8>], spec: &SpanCorruptionSpec, seed: u64, crops: usize, crop_len: usize) -> Result<MlmEval> {
    if heldout.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let mut alphabet = [false; 256];
    for s in heldout {
        for &b in s {
            alphabet[b as usize] = true;
        }
    }
    let alphabet: Vec<usize> = (0..256).filter(|&b| alphabet[b]).collect();
    let cfg = PretrainConfig {
        crop_len,
        spans: *spec,
        ..PretrainConfig::default()
    };
    let counts: Vec<Result<(usize, usize)>> = (0..crops)
        .into_par_iter()
        .map(|i| {
            let c = corrupted_crop(heldout, &cfg, seed, &[STREAM_EVAL, i as u64])?;
            let logits = model.teacher_forced_logits(&c.input, &c.target)?;
            let (mut masked, mut correct) = (0, 0);
            for (t, &tok) in c.target.iter().enumerate() {
                if !is_byte(tok) {
                    continue;
                }
                let row = logits.row(t);
                let best = alphabet
                    .iter()
                    .copied()
                    .fold(alphabet[0], |b, a| if row[a] > row[b] { a } else { b });
                masked += 1;
                correct += usize::from(best == tok as usize);
            }
            Ok((masked, correct))
        })
        .collect();
    let (mut masked, mut correct) = (0, 0);
    for r in counts {
        let (m, c) = r?;
        masked += m;
        correct += c;
    }
    Ok(MlmEval {
        accuracy: if masked == 0 { 0.0 } else { correct as f64 / masked as f64 },
        masked,
        correct,
    })
}

fn pretrain_mask(model: &Model) -> Vec<bool> {
    let mut mask = vec![true; model.params().len()];
    if let Some(c) = model.layout().classifier {
        mask[c.weight.0] = false;
        mask[c.bias.0] = false;
    }
    mask
}

/// Runs pretraining from `resume` (or step 0) up to `cfg.steps`. When
/// `checkpoint_dir` is given a checkpoint is written at every evaluation.
pub fn pretrain(
    model: &mut Model,
    train: &[Vec<u8>],
    heldout: &[Vec<u8>],
    cfg: &PretrainConfig,
    resume: Option<ResumeState>,
    checkpoint_dir: Option<&Path>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if train.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let schedule = WarmupLinearSchedule::new(cfg.peak_lr, cfg.steps);
    let (mut optimizer, start) = match resume {
        Some(r) => (r.optimizer, r.step),
        None => (AdamWState::new(cfg.optimizer, model.params()), 0),
    };
    let mask = pretrain_mask(model);
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut last_eval = None;
    let evaluate = |model: &Model| -> Result<Option<MlmEval>> {
        if heldout.iter().all(Vec::is_empty) {
            return Ok(None);
        }
        mlm_accuracy(model, heldout, &cfg.spans, cfg.seed, cfg.eval_crops, cfg.crop_len).map(Some)
    };
    for step in start..cfg.steps {
        let examples: Vec<Corrupted> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|i| corrupted_crop(train, cfg, cfg.seed, &[STREAM_CROPS, step as u64, i as u64]))
            .collect::<Result<_>>()?;
        let (loss, grads) = batch_gradients(model, &mask, &examples, cfg.seed, step, |f, ex: &Corrupted| {
            f.seq2seq_loss(&ex.input, &ex.target)
        })?;
        let lr = schedule.lr_at(step);
        apply_update(model, &mut optimizer, grads, lr, cfg.clip_norm, loss, step)?;
        let done = step + 1;
        let eval_now = done == cfg.steps || (cfg.eval_interval > 0 && done % cfg.eval_interval == 0);
        let mut acc = None;
        if eval_now {
            last_eval = evaluate(model)?;
            acc = last_eval.map(|e| e.accuracy);
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("step-{done:06}"));
                save_checkpoint(&path, model, done as u64, Some(&optimizer))?;
                checkpoints.push(path);
            }
        }
        if cfg.log_every > 0 && (done % cfg.log_every == 0 || eval_now) {
            match acc {
                Some(a) => eprintln!("pretrain step {done}/{} loss {loss:.4} lr {lr:.2e} mlm_acc {a:.4}", cfg.steps),
                None => eprintln!("pretrain step {done}/{} loss {loss:.4} lr {lr:.2e}", cfg.steps),
            }
        }
        log.push(StepLog {
            step: done,
            loss,
            lr,
            mlm_accuracy: acc,
        });
    }
    Ok(PretrainOutcome {
        log,
        optimizer,
        final_step: cfg.steps.max(start),
        checkpoints,
        final_accuracy: last_eval,
    })
}
