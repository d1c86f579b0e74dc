//! Fine-tuning for classification and sequence-to-sequence tasks with
//! gradual unfreezing.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{apply_update, batch_gradients, StepLog};
use crate::error::{Error, Result};
use crate::genomics_io::{LabeledExample, SeqPair};
use crate::model::Model;
use crate::numerics::rng::rng_from;
use crate::numerics::{AdamWConfig, AdamWState, ParamId, WarmupLinearSchedule};
use crate::tasks::metrics::{classification_metrics, ClassificationReport};
use crate::tokenizer::{encode, TokenId, EOS};

const STREAM_BATCH: u64 = 0xba7c;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UnfreezePolicy {
    /// Every group trains from step 0.
    All,
    /// Only the head ever trains.
    HeadOnly,
    /// Group `g` starts training at step `round(g * every_fraction * steps)`.
    Gradual { every_fraction: f64 },
}

impl Default for UnfreezePolicy {
    fn default() -> Self {
        UnfreezePolicy::Gradual { every_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classifier,
    LanguageModel,
}

/// Ordered parameter groups with the step at which each becomes trainable.
/// Group 0 is the head; later groups walk down the stacks from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfreezeSchedule {
    pub groups: Vec<Vec<ParamId>>,
    /// `usize::MAX` for groups that never unfreeze.
    pub thresholds: Vec<usize>,
}

/// Head, then decoder layers top to bottom (language-model head only), then
/// encoder layers top to bottom. Final norms travel with the top layer of
/// their stack; embeddings and relative-position tables with the bottom one.
pub fn layer_groups(model: &Model, head: HeadKind) -> Result<Vec<Vec<ParamId>>> {
    let lay = model.layout();
    let mut groups = Vec::new();
    match head {
        HeadKind::Classifier => {
            let c = lay
                .classifier
                .ok_or_else(|| Error::config("no classification head attached"))?;
            groups.push(vec![c.weight, c.bias]);
        }
        HeadKind::LanguageModel => {
            groups.push(vec![lay.lm_head]);
            let n = lay.decoder.len();
            for (l, d) in lay.decoder.iter().enumerate().rev() {
                let mut g = vec![d.self_norm, d.self_attn.q, d.self_attn.k, d.self_attn.v, d.self_attn.o];
                g.extend([d.cross_norm, d.cross_attn.q, d.cross_attn.k, d.cross_attn.v, d.cross_attn.o]);
                g.extend([d.ffn_norm, d.ffn_in, d.ffn_out]);
                if l + 1 == n {
                    g.push(lay.decoder_norm);
                }
                if l == 0 {
                    g.push(lay.decoder_bias);
                    g.extend(lay.cross_bias);
                }
                groups.push(g);
            }
        }
    }
    let n = lay.encoder.len();
    for (l, e) in lay.encoder.iter().enumerate().rev() {
        let mut g = vec![e.attn_norm, e.attn.q, e.attn.k, e.attn.v, e.attn.o, e.ffn_norm, e.ffn_in, e.ffn_out];
        if l + 1 == n {
            g.push(lay.encoder_norm);
        }
        if l == 0 {
            g.push(lay.encoder_bias);
            g.push(lay.embedding);
        }
        groups.push(g);
    }
    Ok(groups)
}

impl UnfreezeSchedule {
    pub fn new(groups: Vec<Vec<ParamId>>, policy: UnfreezePolicy, steps: usize) -> Result<Self> {
        let thresholds = (0..groups.len())
            .map(|g| match policy {
                UnfreezePolicy::All => Ok(0),
                UnfreezePolicy::HeadOnly => Ok(if g == 0 { 0 } else { usize::MAX }),
                UnfreezePolicy::Gradual { every_fraction } => {
                    if !(every_fraction > 0.0) {
                        return Err(Error::config("every_fraction must be positive"));
                    }
                    let at = g as f64 * every_fraction;
                    Ok(if at >= 1.0 {
                        usize::MAX
                    } else {
                        (at * steps as f64).round() as usize
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { groups, thresholds })
    }

    pub fn trainable_mask(&self, step: usize, n_params: usize) -> Vec<bool> {
        let mut mask = vec![false; n_params];
        for (group, &t) in self.groups.iter().zip(&self.thresholds) {
            if step >= t {
                for id in group {
                    mask[id.0] = true;
                }
            }
        }
        mask
    }

    /// Steps during which only the head trains.
    pub fn head_only_steps(&self, total: usize) -> usize {
        self.thresholds.iter().skip(1).copied().min().unwrap_or(usize::MAX).min(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub unfreeze: UnfreezePolicy,
    pub clip_norm: Option<f64>,
    /// Beams used for heldout exact-match scoring in seq2seq runs.
    pub eval_beams: usize,
    pub log_every: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            peak_lr: 1e-3,
            seed: 0,
            optimizer: AdamWConfig::default(),
            unfreeze: UnfreezePolicy::default(),
            clip_norm: None,
            eval_beams: 1,
            log_every: 0,
        }
    }
}

/// Parameters found changed while their group was still frozen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenViolation {
    pub step: usize,
    pub parameter: String,
}

struct FreezeAudit {
    initial: Vec<String>,
    violations: Vec<FrozenViolation>,
}

impl FreezeAudit {
    fn new(model: &Model) -> Self {
        Self {
            initial: model.params().ids().map(|id| model.params().digest(id)).collect(),
            violations: Vec::new(),
        }
    }

    fn check(&mut self, model: &Model, ids: &[ParamId], step: usize) {
        for &id in ids {
            if model.params().digest(id) != self.initial[id.0] {
                self.violations.push(FrozenViolation {
                    step,
                    parameter: model.params().name(id).to_string(),
                });
            }
        }
    }

    /// Audits groups that unfreeze at `step` (or never, at the end).
    fn at_step(&mut self, model: &Model, schedule: &UnfreezeSchedule, step: usize, end: bool) {
        for (group, &t) in schedule.groups.iter().zip(&schedule.thresholds) {
            if (t == step && step > 0) || (end && t >= step) {
                self.check(model, group, step);
            }
        }
    }
}

fn sample_batch<T: Clone>(data: &[T], batch: usize, seed: u64, step: usize) -> Vec<T> {
    let mut rng = rng_from(seed, &[STREAM_BATCH, step as u64]);
    (0..batch).map(|_| data[rng.random_range(0..data.len())].clone()).collect()
}

/// Shared loop: gradual unfreezing, AdamW, warmup-linear schedule.
fn finetune_loop<E, F>(
    model: &mut Model,
    train: &[E],
    cfg: &FinetuneConfig,
    schedule: &UnfreezeSchedule,
    label: &str,
    loss: F,
) -> Result<(Vec<StepLog>, Vec<FrozenViolation>)>
where
    E: Clone + Sync,
    F: Fn(&mut crate::model::Forward<'_, '_>, &E) -> Result<crate::numerics::Var> + Sync,
{
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let lr_schedule = WarmupLinearSchedule::new(cfg.peak_lr, cfg.steps);
    let mut optimizer = AdamWState::new(cfg.optimizer, model.params());
    let mut audit = FreezeAudit::new(model);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        audit.at_step(model, schedule, step, false);
        let mask = schedule.trainable_mask(step, model.params().len());
        let batch = sample_batch(train, cfg.batch_size, cfg.seed, step);
        let (l, grads) = batch_gradients(model, &mask, &batch, cfg.seed, step, &loss)?;
        let lr = lr_schedule.lr_at(step);
        apply_update(model, &mut optimizer, grads, lr, cfg.clip_norm, l, step)?;
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            eprintln!("{label} step {}/{} loss {l:.4} lr {lr:.2e}", step + 1, cfg.steps);
        }
        log.push(StepLog {
            step: step + 1,
            loss: l,
            lr,
            mlm_accuracy: None,
        });
    }
    audit.at_step(model, schedule, cfg.steps, true);
    Ok((log, audit.violations))
}

#[derive(Debug, Clone)]
pub struct ClassifierOutcome {
    pub log: Vec<StepLog>,
    pub report: ClassificationReport,
    pub frozen_violations: Vec<FrozenViolation>,
    pub head_only_steps: usize,
}

/// Predicted class (argmax, lowest index on ties) for every example.
pub fn predict_classes(model: &Model, sequences: &[Vec<u8>]) -> Result<Vec<usize>> {
    sequences
        .par_iter()
        .map(|s| {
            let p = model.classify(&encode(s))?;
            Ok(p.iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > p[b] { i } else { b }))
        })
        .collect()
}

pub fn finetune_classifier(
    model: &mut Model,
    train: &[LabeledExample],
    heldout: &[LabeledExample],
    n_classes: usize,
    cfg: &FinetuneConfig,
) -> Result<ClassifierOutcome> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::InvalidArgument("classification needs non-empty train and heldout sets".into()));
    }
    if let Some(e) = train.iter().chain(heldout).find(|e| e.label >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {} outside 0..{n_classes}", e.label)));
    }
    model.attach_classifier(n_classes)?;
    let max_len = model.config().max_len;
    let examples: Vec<(Vec<TokenId>, usize)> = train
        .iter()
        .map(|e| (encode(&e.sequence[..e.sequence.len().min(max_len)]), e.label))
        .collect();
    let schedule = UnfreezeSchedule::new(layer_groups(model, super::HeadKind::Classifier)?, cfg.unfreeze, cfg.steps)?;
    let (log, frozen_violations) = finetune_loop(model, &examples, cfg, &schedule, "classify", |f, (x, y)| {
        f.classification_loss(x, *y)
    })?;
    let seqs: Vec<Vec<u8>> = heldout.iter().map(|e| e.sequence[..e.sequence.len().min(max_len)].to_vec()).collect();
    let preds = predict_classes(model, &seqs)?;
    let truths: Vec<usize> = heldout.iter().map(|e| e.label).collect();
    Ok(ClassifierOutcome {
        log,
        report: classification_metrics(&preds, &truths, n_classes)?,
        frozen_violations,
        head_only_steps: schedule.head_only_steps(cfg.steps),
    })
}

#[derive(Debug, Clone)]
pub struct Seq2SeqOutcome {
    pub log: Vec<StepLog>,
    pub exact_match: f64,
    pub token_accuracy: f64,
    /// Pairs shortened to fit `max_len`.
    pub truncated: usize,
    pub frozen_violations: Vec<FrozenViolation>,
}

/// Source and EOS-terminated target token ids, truncated to `max_len`.
fn pair_tokens(p: &SeqPair, max_len: usize) -> (Vec<TokenId>, Vec<TokenId>, bool) {
    let src = &p.source[..p.source.len().min(max_len)];
    let tgt = &p.target[..p.target.len().min(max_len - 1)];
    let mut t = encode(tgt);
    t.push(EOS);
    let cut = src.len() < p.source.len() || tgt.len() < p.target.len();
    (encode(src), t, cut)
}

pub fn finetune_seq2seq(model: &mut Model, train: &[SeqPair], heldout: &[SeqPair], cfg: &FinetuneConfig) -> Result<Seq2SeqOutcome> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::InvalidArgument("seq2seq needs non-empty train and heldout sets".into()));
    }
    let max_len = model.config().max_len;
    let mut truncated = 0;
    let examples: Vec<(Vec<TokenId>, Vec<TokenId>)> = train
        .iter()
        .map(|p| {
            let (s, t, cut) = pair_tokens(p, max_len);
            truncated += usize::from(cut);
            (s, t)
        })
        .collect();
    if truncated > 0 {
        eprintln!("warning: {truncated} training pairs truncated to max_len {max_len}");
    }
    let schedule = UnfreezeSchedule::new(layer_groups(model, super::HeadKind::LanguageModel)?, cfg.unfreeze, cfg.steps)?;
    let (log, frozen_violations) = finetune_loop(model, &examples, cfg, &schedule, "seq2seq", |f, (s, t)| f.seq2seq_loss(s, t))?;
    let (exact_match, token_accuracy) = evaluate_seq2seq(model, heldout, cfg.eval_beams.max(1))?;
    Ok(Seq2SeqOutcome {
        log,
        exact_match,
        token_accuracy,
        truncated,
        frozen_violations,
    })
}

/// Exact match of the top-ranked generation and teacher-forced token accuracy.
pub fn evaluate_seq2seq(model: &Model, pairs: &[SeqPair], beams: usize) -> Result<(f64, f64)> {
    let max_len = model.config().max_len;
    let per_pair: Vec<Result<(bool, usize, usize)>> = pairs
        .par_iter()
        .map(|p| {
            let (src, tgt, _) = pair_tokens(p, max_len);
            let body = &tgt[..tgt.len() - 1];
            let max_new = tgt.len().min(max_len - 1);
            let best = if beams > 1 {
                let c = model.generate_beam(&src, beams, max_new)?;
                c[0].tokens.clone()
            } else {
                model.generate_greedy(&src, max_new)?
            };
            let logits = model.teacher_forced_logits(&src, &tgt)?;
            let mut correct = 0;
            for (i, &t) in tgt.iter().enumerate() {
                let row = logits.row(i);
                let arg = row.iter().enumerate().fold(0, |b, (j, &v)| if v > row[b] { j } else { b });
                correct += usize::from(arg == t as usize);
            }
            Ok((best == body, correct, tgt.len()))
        })
        .collect();
    let (mut exact, mut correct, mut total) = (0usize, 0usize, 0usize);
    for r in per_pair {
        let (e, c, t) = r?;
        exact += usize::from(e);
        correct += c;
        total += t;
    }
    Ok((exact as f64 / pairs.len() as f64, correct as f64 / total as f64))
}
