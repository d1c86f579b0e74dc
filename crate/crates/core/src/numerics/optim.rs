//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::array::NdArray;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-6,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: NdArray,
    v: NdArray,
    steps: u64,
}

/// Optimizer state. Moments are created lazily the first time a parameter
/// receives a gradient, and each parameter keeps its own bias-correction
/// step count so that late-unfrozen layers start with correct corrections.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    moments: Vec<Option<Moments>>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            moments: vec![None; store.len()],
        }
    }

    /// Applies one update to every parameter in `grads`. Nothing is modified
    /// if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, NdArray)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if g.shape() != store.get(*id).shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    left: store.get(*id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(store.name(*id).to_string()));
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let c = self.config;
        for (id, g) in grads {
            let decay = store.entry(*id).decay;
            let param = store.get_mut(*id);
            let mom = self.moments[id.0].get_or_insert_with(|| Moments {
                m: NdArray::zeros(g.shape()),
                v: NdArray::zeros(g.shape()),
                steps: 0,
            });
            mom.steps += 1;
            let bc1 = 1.0 - c.beta1.powi(mom.steps as i32);
            let bc2 = 1.0 - c.beta2.powi(mom.steps as i32);
            let wd = if decay { c.weight_decay } else { 0.0 };
            let m = mom.m.data_mut();
            let v = mom.v.data_mut();
            for (i, (p, &gi)) in param.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= lr * wd * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Moment arrays for `id` (`None` until it first receives a gradient).
    pub fn moments(&self, id: ParamId) -> Option<(&NdArray, &NdArray, u64)> {
        self.moments
            .get(id.0)
            .and_then(Option::as_ref)
            .map(|m| (&m.m, &m.v, m.steps))
    }

    pub fn set_moments(&mut self, id: ParamId, m: NdArray, v: NdArray, steps: u64) {
        if self.moments.len() <= id.0 {
            self.moments.resize(id.0 + 1, None);
        }
        self.moments[id.0] = Some(Moments { m, v, steps });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", NdArray::new(vec![values.len()], values.to_vec()).unwrap(), true);
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut s = store(&[1.0, -2.0]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamWState::new(cfg, &s);
        let g = vec![(ParamId(0), NdArray::zeros(&[2]))];
        opt.step(&mut s, &g, 1e-3).unwrap();
        assert_eq!(s.get(ParamId(0)).data(), &[1.0, -2.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_is_bias_corrected() {
        let mut s = store(&[0.5]);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamWState::new(cfg, &s);
        opt.step(&mut s, &[(ParamId(0), NdArray::full(&[1], 1.0))], 1e-5)
            .unwrap();
        // m̂ = v̂ = 1 after one step, so Δ = -lr / (1 + eps)
        let expected = 0.5 - 1e-5 / (1.0 + 1e-6);
        assert!((s.get(ParamId(0)).data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn deterministic_updates() {
        let mut a = store(&[0.1, 0.2, 0.3]);
        let mut b = a.clone();
        let mut oa = AdamWState::new(AdamWConfig::default(), &a);
        let mut ob = AdamWState::new(AdamWConfig::default(), &b);
        for k in 0..5 {
            let g = vec![(ParamId(0), NdArray::full(&[3], 0.3 * k as f64 - 0.4))];
            oa.step(&mut a, &g, 1e-2).unwrap();
            ob.step(&mut b, &g, 1e-2).unwrap();
        }
        let bits = |s: &ParamStore| s.get(ParamId(0)).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(&[1.0]);
        let mut opt = AdamWState::new(AdamWConfig::default(), &s);
        let err = opt
            .step(&mut s, &[(ParamId(0), NdArray::full(&[1], f64::NAN))], 1e-3)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(s.get(ParamId(0)).data(), &[1.0]);
    }

    #[test]
    fn decay_skips_gains() {
        let mut s = ParamStore::new();
        s.add("m", NdArray::full(&[1], 1.0), true);
        s.add("g", NdArray::full(&[1], 1.0), false);
        let mut opt = AdamWState::new(AdamWConfig::default(), &s);
        let g = vec![
            (ParamId(0), NdArray::zeros(&[1])),
            (ParamId(1), NdArray::zeros(&[1])),
        ];
        opt.step(&mut s, &g, 0.1).unwrap();
        assert!((s.get(ParamId(0)).data()[0] - 0.999).abs() < 1e-15);
        assert_eq!(s.get(ParamId(1)).data()[0], 1.0);
    }
}
