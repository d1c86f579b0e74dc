//! Dense, sliding-window and sliding-window + block-global attention.
//!
//! The sparse variants never materialize an `L×L` score matrix: each query
//! scores at most `2r+1` window keys plus `k` global keys, for
//! `L(2r+1+k)` score evaluations per head.

pub mod kernel;
pub mod maps;
pub mod plan;
pub mod relpos;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NdArray;

pub use kernel::{attend, attend_backward, AttnForward};
pub use plan::{block_ranges, AttentionPlan};
pub use relpos::RelativePosition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttnMode {
    Dense,
    Sliding { radius: usize },
    SlidingGlobal { radius: usize, blocks: usize },
}

impl AttnMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AttnMode::Sliding { radius } | AttnMode::SlidingGlobal { radius, .. } if radius < 1 => {
                Err(Error::config("attention radius must be >= 1"))
            }
            AttnMode::SlidingGlobal { blocks, .. } if blocks < 1 => {
                Err(Error::config("global block count must be >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Maximum keys scored per query.
    pub fn width(&self, len: usize) -> usize {
        match *self {
            AttnMode::Dense => len,
            AttnMode::Sliding { radius } => (2 * radius + 1).min(len),
            AttnMode::SlidingGlobal { radius, blocks } => (2 * radius + 1).min(len) + blocks.min(len),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttnSpec {
    pub mode: AttnMode,
    pub causal: bool,
    pub heads: usize,
    pub d_kv: usize,
}

/// Result of a standalone attention evaluation.
#[derive(Debug, Clone)]
pub struct AttnResult {
    pub output: NdArray,
    /// Row-stochastic weights, `[queries, keys]`, zero outside the key set.
    pub weights: NdArray,
    /// Query-key scores evaluated.
    pub score_evals: usize,
}

fn run_single_head(q: &NdArray, k: &NdArray, v: &NdArray, plan: &AttentionPlan) -> Result<AttnResult> {
    let fwd = attend(q, k, v, 1, plan, None, None)?;
    let mut weights = NdArray::zeros(&[plan.num_queries(), plan.num_keys()]);
    for i in 0..plan.num_queries() {
        for s in plan.slots(i) {
            let j = plan.keys()[s] as usize;
            weights.data_mut()[i * plan.num_keys() + j] += fwd.probs[s];
        }
    }
    Ok(AttnResult {
        output: fwd.output,
        weights,
        score_evals: plan.score_count(),
    })
}

/// `softmax(QKᵀ/√d)V` with an optional `queries × keys` allow-mask. Rows with
/// every key forbidden produce zeros.
pub fn dense_attention(q: &NdArray, k: &NdArray, v: &NdArray, mask: Option<&[Vec<bool>]>) -> Result<AttnResult> {
    let plan = match mask {
        Some(m) => {
            if m.len() != q.rows() || m.iter().any(|r| r.len() != k.rows()) {
                return Err(Error::Shape {
                    op: "dense_attention mask",
                    left: vec![q.rows(), k.rows()],
                    right: vec![m.len(), m.first().map_or(0, Vec::len)],
                });
            }
            AttentionPlan::from_mask(m)
        }
        None => AttentionPlan::dense(q.rows(), k.rows(), false, 0, None),
    };
    run_single_head(q, k, v, &plan)
}

/// Causal mask for square attention: key `j` visible from query `i` iff `j <= i`.
pub fn causal_mask(len: usize) -> Vec<Vec<bool>> {
    (0..len).map(|i| (0..len).map(|j| j <= i).collect()).collect()
}

/// Banded mask equivalent of a radius-`r` sliding window.
pub fn band_mask(len: usize, radius: usize) -> Vec<Vec<bool>> {
    (0..len)
        .map(|i| (0..len).map(|j| i.abs_diff(j) <= radius).collect())
        .collect()
}

pub fn sliding_attention(q: &NdArray, k: &NdArray, v: &NdArray, radius: usize) -> Result<AttnResult> {
    if radius < 1 {
        return Err(Error::InvalidArgument("radius must be >= 1".into()));
    }
    if k.rows() != q.rows() {
        return Err(Error::Shape {
            op: "sliding_attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let plan = AttentionPlan::sliding(q.rows(), radius, None);
    run_single_head(q, k, v, &plan)
}

/// Mean of each of `blocks` contiguous near-equal row blocks of `x`.
pub fn block_global_tokens(x: &NdArray, blocks: usize) -> Result<NdArray> {
    let len = x.rows();
    if blocks < 1 || blocks > len {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= L, got k={blocks}, L={len}"
        )));
    }
    let mut out = NdArray::zeros(&[blocks, x.cols()]);
    for (b, range) in block_ranges(len, blocks).into_iter().enumerate() {
        let n = range.len() as f64;
        for i in range {
            for (o, v) in out.row_mut(b).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        out.row_mut(b).iter_mut().for_each(|o| *o /= n);
    }
    Ok(out)
}

/// Sliding window of radius `r` plus `blocks` global tokens. Global keys and
/// values are the block means of `K` and `V`, which equals projecting the
/// block means of the layer input through the same bias-free projections.
/// Weight columns `L..L+blocks` belong to the global tokens.
pub fn sliding_global_attention(q: &NdArray, k: &NdArray, v: &NdArray, radius: usize, blocks: usize) -> Result<AttnResult> {
    if radius < 1 {
        return Err(Error::InvalidArgument("radius must be >= 1".into()));
    }
    let len = q.rows();
    if k.rows() != len || v.rows() != len {
        return Err(Error::Shape {
            op: "sliding_global_attention",
            left: q.shape().to_vec(),
            right: k.shape().to_vec(),
        });
    }
    let gk = block_global_tokens(k, blocks)?;
    let gv = block_global_tokens(v, blocks)?;
    let keys = crate::numerics::ops::concat_rows(&[k, &gk])?;
    let values = crate::numerics::ops::concat_rows(&[v, &gv])?;
    let plan = AttentionPlan::sliding_global(len, radius, blocks, None);
    run_single_head(q, &keys, &values, &plan)
}

/// Per-layer window radius. Full-size presets use the small radius for the
/// first three layers; the toy preset switches after half the stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRadiusSchedule {
    pub radii: Vec<usize>,
}

impl LayerRadiusSchedule {
    pub fn split(layers: usize, small_layers: usize, small: usize, large: usize) -> Self {
        Self {
            radii: (0..layers)
                .map(|l| if l < small_layers { small } else { large })
                .collect(),
        }
    }

    pub fn radius(&self, layer: usize) -> usize {
        self.radii[layer]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(values: &[f64]) -> NdArray {
        NdArray::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> NdArray {
        NdArray::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn dense_scalar_example() {
        let r = dense_attention(&col(&[2.0]), &col(&[2.0, -2.0]), &col(&[1.0, 0.0]), None).unwrap();
        let expected = 1.0 / (1.0 + (-8.0f64).exp());
        assert!((r.output.data()[0] - expected).abs() < 1e-15);
        assert!((r.output.data()[0] - 0.999665).abs() < 1e-6);
    }

    #[test]
    fn single_row_and_causal_first_position() {
        let x = NdArray::from_rows(&[vec![0.3, -0.7, 1.1]]);
        let r = dense_attention(&x, &x, &x, None).unwrap();
        assert!(r.output.max_abs_diff(&x) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random(5, 3, &mut rng), random(5, 3, &mut rng), random(5, 3, &mut rng));
        let r = dense_attention(&q, &k, &v, Some(&causal_mask(5))).unwrap();
        assert_eq!(r.output.row(0), v.row(0));
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let x = NdArray::from_rows(&[vec![1.0], vec![2.0]]);
        let mask = vec![vec![false, false], vec![true, true]];
        let r = dense_attention(&x, &x, &x, Some(&mask)).unwrap();
        assert_eq!(r.output.row(0), &[0.0]);
        assert!(r.output.all_finite());
    }

    #[test]
    fn sliding_excludes_far_position() {
        let v = NdArray::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let r = sliding_attention(&v, &v, &v, 1).unwrap();
        assert_eq!(r.output.get(0, 2), 0.0);
        assert_eq!(r.output.get(2, 0), 0.0);
        assert!(r.output.get(1, 0) > 0.0 && r.output.get(1, 2) > 0.0);
    }

    #[test]
    fn wide_window_is_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (random(7, 4, &mut rng), random(7, 4, &mut rng), random(7, 4, &mut rng));
        let a = sliding_attention(&q, &k, &v, 6).unwrap();
        let b = dense_attention(&q, &k, &v, None).unwrap();
        assert!(a.output.max_abs_diff(&b.output) < 1e-12);
    }

    #[test]
    fn global_token_examples() {
        let x = NdArray::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(block_global_tokens(&x, 1).unwrap().data(), &[2.0, 2.0]);
        assert_eq!(block_global_tokens(&x, 2).unwrap(), x);
        assert!(block_global_tokens(&x, 3).is_err());
    }

    #[test]
    fn global_with_constant_input_matches_augmented_dense() {
        let len = 6;
        let x = NdArray::full(&[len, 3], 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random(len, 3, &mut rng);
        let r = sliding_global_attention(&q, &x, &x, len, 1).unwrap();
        let mean = block_global_tokens(&x, 1).unwrap();
        let keys = crate::numerics::ops::concat_rows(&[&x, &mean]).unwrap();
        let d = dense_attention(&q, &keys, &keys, None).unwrap();
        assert!(r.output.max_abs_diff(&d.output) < 1e-12);
    }

    #[test]
    fn weights_are_row_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (q, k, v) = (random(12, 4, &mut rng), random(12, 4, &mut rng), random(12, 4, &mut rng));
        let r = sliding_global_attention(&q, &k, &v, 2, 3).unwrap();
        for i in 0..12 {
            let s: f64 = r.weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(r.weights.row(i).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
        assert!(r.score_evals <= 12 * (2 * 2 + 1 + 3));
    }

    #[test]
    fn radius_schedule_split() {
        let s = LayerRadiusSchedule::split(8, 3, 64, 128);
        assert_eq!(s.radii, vec![64, 64, 64, 128, 128, 128, 128, 128]);
    }
}
