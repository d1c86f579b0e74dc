//! Central-difference gradient checks.

use super::array::NdArray;
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Denominator floor for the relative error, so that near-zero gradients are
/// compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
        self.max_abs_error = self.max_abs_error.max((analytic - numeric).abs());
        self.checked += 1;
    }
}

/// Indices to probe: all of them, or `limit` evenly spread ones.
fn probe_indices(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(l) if l < n => (0..l).map(|i| i * n / l + (n / l) / 2).map(|i| i.min(n - 1)).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of a scalar function built on a fresh graph from
/// `inputs`, comparing backward-pass gradients to `(f(x+h) - f(x-h)) / 2h`.
pub fn grad_check<F>(f: F, inputs: &[NdArray], h: f64, limit_per_input: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[NdArray]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.constant(v.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.variable(v.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let mut report = GradCheckReport::empty();
    let mut work: Vec<NdArray> = inputs.to_vec();
    for (slot, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| NdArray::zeros(inputs[slot].shape()));
        for idx in probe_indices(inputs[slot].len(), limit_per_input) {
            let orig = work[slot].data()[idx];
            work[slot].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[slot].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[slot].data_mut()[idx] = orig;
            report.record(analytic.data()[idx], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Same check for functions of a parameter store. `f` returns the loss and
/// the analytic gradients; `loss` returns only the loss.
pub fn grad_check_store<F, L>(
    store: &mut ParamStore,
    f: F,
    loss: L,
    h: f64,
    limit_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<(ParamId, NdArray)>)>,
    L: Fn(&ParamStore) -> Result<f64>,
{
    let (_, grads) = f(store)?;
    let mut report = GradCheckReport::empty();
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = grads
            .iter()
            .find(|(g, _)| *g == id)
            .map(|(_, a)| a.clone())
            .unwrap_or_else(|| NdArray::zeros(store.get(id).shape()));
        for idx in probe_indices(store.get(id).len(), limit_per_param) {
            let orig = store.get(id).data()[idx];
            store.get_mut(id).data_mut()[idx] = orig + h;
            let plus = loss(store)?;
            store.get_mut(id).data_mut()[idx] = orig - h;
            let minus = loss(store)?;
            store.get_mut(id).data_mut()[idx] = orig;
            report.record(analytic.data()[idx], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> NdArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NdArray::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn square_at_three() {
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[NdArray::scalar(3.0)],
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_abs_error < 1e-6);
    }

    #[test]
    fn cross_entropy_of_softmax_logits() {
        let r = grad_check(
            |g, v| g.cross_entropy(v[0], &[1, 4, 0, 2], usize::MAX),
            &[random(4, 6, 1)],
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn elementary_ops() {
        let a = random(3, 4, 2);
        let b = random(4, 5, 3);
        let row = random(1, 5, 4).reshape(&[5]).unwrap();
        let gain = random(1, 5, 5).reshape(&[5]).unwrap();
        let r = grad_check(
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let m = g.add_row(m, v[2])?;
                let n = g.rms_norm(m, v[3])?;
                let s = g.softmax(n)?;
                let t = g.transpose(s);
                let t = g.scale(t, 1.7);
                let sl = g.slice_rows(t, 1..4)?;
                let sc = g.slice_cols(sl, 0..2)?;
                let cat = g.concat_cols(&[sc, sc])?;
                let cat = g.concat_rows(&[cat, cat])?;
                let rl = g.relu(cat);
                let mean = g.mean_rows(rl, 0..5)?;
                let bm = g.block_mean(n, vec![0..2, 2..3])?;
                let r2 = g.reshape(bm, &[1, 10])?;
                let prod = g.mul(r2, r2)?;
                let s1 = g.sum(mean);
                let s2 = g.sum(prod);
                let total = g.add(s1, s2)?;
                Ok(total)
            },
            &[a, b, row, gain],
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn gather_gradient() {
        let r = grad_check(
            |g, v| {
                let e = g.gather(v[0], &[2, 0, 2])?;
                let sq = g.mul(e, e)?;
                Ok(g.sum(sq))
            },
            &[random(3, 4, 9)],
            1e-5,
            None,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6);
    }
}
