//! Shared optimizer-step machinery: per-example graphs evaluated in
//! parallel, gradients reduced in example order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Forward, Model, Trainable};
use crate::numerics::rng::derive_seed;
use crate::numerics::{AdamWState, Graph, NdArray, ParamId, Var};

/// One row of a training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub mlm_accuracy: Option<f64>,
}

/// Writes `step,loss,lr,mlm_accuracy` CSV.
pub fn write_metrics_csv<W: std::io::Write>(out: &mut W, log: &[StepLog]) -> std::io::Result<()> {
    writeln!(out, "step,loss,lr,mlm_accuracy")?;
    for row in log {
        let acc = row.mlm_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.9},{:.9e},{}", row.step, row.loss, row.lr, acc)?;
    }
    Ok(())
}

/// Mean loss and mean gradients over `examples`.
pub(crate) fn batch_gradients<E, F>(
    model: &Model,
    trainable: &[bool],
    examples: &[E],
    seed: u64,
    step: usize,
    loss: F,
) -> Result<(f64, Vec<(ParamId, NdArray)>)>
where
    E: Sync,
    F: Fn(&mut Forward<'_, '_>, &E) -> Result<Var> + Sync,
{
    let per_example: Vec<Result<(f64, Vec<(ParamId, NdArray)>)>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut g = Graph::training(derive_seed(seed, &[step as u64, i as u64]));
            let l = {
                let mut f = Forward::new(&mut g, model, Trainable::Mask(trainable));
                loss(&mut f, ex)?
            };
            let value = g.value(l).data()[0];
            let grads = g.backward(l)?.param_grads(&g);
            Ok((value, grads))
        })
        .collect();
    let mut acc: Vec<Option<NdArray>> = vec![None; model.params().len()];
    let mut total = 0.0;
    for r in per_example {
        let (value, grads) = r?;
        total += value;
        for (id, g) in grads {
            match &mut acc[id.0] {
                Some(a) => a.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
    }
    let scale = 1.0 / examples.len() as f64;
    let grads = acc
        .into_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            g.map(|mut g| {
                g.scale_assign(scale);
                (ParamId(i), g)
            })
        })
        .collect();
    Ok((total * scale, grads))
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
pub(crate) fn clip_gradients(grads: &mut [(ParamId, NdArray)], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads {
            g.scale_assign(s);
        }
    }
}

pub(crate) fn apply_update(
    model: &mut Model,
    optimizer: &mut AdamWState,
    mut grads: Vec<(ParamId, NdArray)>,
    lr: f64,
    clip_norm: Option<f64>,
    loss: f64,
    step: usize,
) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(step));
    }
    if let Some(c) = clip_norm {
        clip_gradients(&mut grads, c);
    }
    optimizer.step(model.params_mut(), &grads, lr)
}
