//! Multi-head scaled dot-product attention over an [`AttentionPlan`].
//!
//! `q` is `[Lq, H*d]`, `k`/`v` are `[Lk, H*d]`; head `h` owns columns
//! `h*d..(h+1)*d`. Scores are `q·k/sqrt(d)` plus an optional per-head bias
//! looked up by the slot's relative-position bucket. Queries with no visible
//! key produce a zero row.

use super::plan::{AttentionPlan, NO_BUCKET};
use crate::error::{Error, Result};
use crate::numerics::ops::softmax_in_place;
use crate::numerics::NdArray;

#[derive(Debug, Clone)]
pub struct AttnForward {
    pub output: NdArray,
    /// Softmax weights before dropout, laid out `[head][slot]`.
    pub probs: Vec<f64>,
}

fn check(q: &NdArray, k: &NdArray, v: &NdArray, heads: usize, plan: &AttentionPlan, bias: Option<&NdArray>) -> Result<usize> {
    let width = q.cols();
    if heads == 0 || width % heads != 0 || k.cols() != width || v.cols() != width {
        return Err(Error::Shape {
            op: "attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    if k.rows() != v.rows() || k.rows() < plan.num_keys() || q.rows() != plan.num_queries() {
        return Err(Error::Shape {
            op: "attention",
            left: k.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.rows() != heads {
            return Err(Error::Shape {
                op: "attention bias",
                left: b.shape().to_vec(),
                right: vec![heads],
            });
        }
    }
    Ok(width / heads)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn attend(
    q: &NdArray,
    k: &NdArray,
    v: &NdArray,
    heads: usize,
    plan: &AttentionPlan,
    bias: Option<&NdArray>,
    dropout: Option<&[f64]>,
) -> Result<AttnForward> {
    let d = check(q, k, v, heads, plan, bias)?;
    let scale = 1.0 / (d as f64).sqrt();
    let slots_total = plan.score_count();
    let mut probs = vec![0.0; heads * slots_total];
    let mut output = NdArray::zeros(&[q.rows(), q.cols()]);
    let keys = plan.keys();
    let buckets = plan.buckets();
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        let head_probs = &mut probs[h * slots_total..(h + 1) * slots_total];
        for i in 0..plan.num_queries() {
            let slots = plan.slots(i);
            if slots.is_empty() {
                continue;
            }
            let qi = &q.row(i)[cols.clone()];
            let row = &mut head_probs[slots.clone()];
            for (p, s) in row.iter_mut().zip(slots.clone()) {
                let kj = &k.row(keys[s] as usize)[cols.clone()];
                let mut score = dot(qi, kj) * scale;
                if let (Some(b), true) = (bias, buckets[s] != NO_BUCKET) {
                    score += b.get(h, buckets[s] as usize);
                }
                *p = score;
            }
            softmax_in_place(row);
            let out = &mut output.row_mut(i)[cols.clone()];
            for (idx, s) in slots.enumerate() {
                let mut w = row[idx];
                if let Some(m) = dropout {
                    w *= m[h * slots_total + s];
                }
                if w == 0.0 {
                    continue;
                }
                let vj = &v.row(keys[s] as usize)[cols.clone()];
                for (o, x) in out.iter_mut().zip(vj) {
                    *o += w * x;
                }
            }
        }
    }
    Ok(AttnForward { output, probs })
}

pub struct AttnGrads {
    pub q: NdArray,
    pub k: NdArray,
    pub v: NdArray,
    pub bias: Option<NdArray>,
}

#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    q: &NdArray,
    k: &NdArray,
    v: &NdArray,
    heads: usize,
    plan: &AttentionPlan,
    bias_shape: Option<&[usize]>,
    probs: &[f64],
    dropout: Option<&[f64]>,
    grad_out: &NdArray,
) -> AttnGrads {
    let d = q.cols() / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let slots_total = plan.score_count();
    let keys = plan.keys();
    let buckets = plan.buckets();
    let mut dq = NdArray::zeros(q.shape());
    let mut dk = NdArray::zeros(k.shape());
    let mut dv = NdArray::zeros(v.shape());
    let mut dbias = bias_shape.map(NdArray::zeros);
    let mut dprob = vec![0.0; plan.max_slots()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..plan.num_queries() {
            let slots = plan.slots(i);
            if slots.is_empty() {
                continue;
            }
            let go = &grad_out.row(i)[cols.clone()];
            let n = slots.len();
            let mut weighted = 0.0;
            for (idx, s) in slots.clone().enumerate() {
                let key = keys[s] as usize;
                let p = probs[h * slots_total + s];
                let m = dropout.map_or(1.0, |m| m[h * slots_total + s]);
                let vj = &v.row(key)[cols.clone()];
                let dw = dot(go, vj);
                dprob[idx] = dw * m;
                weighted += dprob[idx] * p;
                let w = p * m;
                if w != 0.0 {
                    for (dvx, g) in dv.row_mut(key)[cols.clone()].iter_mut().zip(go) {
                        *dvx += w * g;
                    }
                }
            }
            let qi = &q.row(i)[cols.clone()];
            for (idx, s) in slots.enumerate() {
                let key = keys[s] as usize;
                let p = probs[h * slots_total + s];
                let ds = p * (dprob[idx] - weighted);
                if ds == 0.0 {
                    continue;
                }
                if let (Some(db), true) = (dbias.as_mut(), buckets[s] != NO_BUCKET) {
                    let c = db.cols();
                    db.data_mut()[h * c + buckets[s] as usize] += ds;
                }
                let g = ds * scale;
                let kj = &k.row(key)[cols.clone()];
                for (dqx, kx) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                    *dqx += g * kx;
                }
                for (dkx, qx) in dk.row_mut(key)[cols.clone()].iter_mut().zip(qi) {
                    *dkx += g * qx;
                }
            }
            debug_assert!(n <= dprob.len());
        }
    }
    AttnGrads {
        q: dq,
        k: dk,
        v: dv,
        bias: dbias,
    }
}
