//! Sequencing-noise simulation and the clean-vs-noisy read dataset.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::reference::{ReadSampler, ReferenceSim};
use crate::error::{Error, Result};
use crate::genomics_io::LabeledExample;
use crate::model::Model;
use crate::numerics::rng::rng_from;
use crate::tokenizer::encode;

const BASES: &[u8; 4] = b"ACGT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub p_insert: f64,
    pub p_delete: f64,
    pub p_substitute: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::uniform(0.02)
    }
}

impl NoiseSpec {
    /// Every event at rate `p`.
    pub fn uniform(p: f64) -> Self {
        Self {
            p_insert: p,
            p_delete: p,
            p_substitute: p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_insert, self.p_delete, self.p_substitute];
        if ps.iter().any(|p| !(0.0..1.0).contains(p)) || ps.iter().sum::<f64>() >= 1.0 {
            return Err(Error::config("noise probabilities must lie in [0, 1) and sum below 1"));
        }
        Ok(())
    }

    /// Fraction of bases copied unchanged.
    pub fn accuracy(&self) -> f64 {
        1.0 - self.p_insert - self.p_delete - self.p_substitute
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseCounts {
    pub inserted: usize,
    pub deleted: usize,
    pub substituted: usize,
    pub copied: usize,
}

/// Applies per-base events drawn from one uniform variate each: delete,
/// substitute with a different base, or copy and then insert a random base.
pub fn inject_noise_counted<R: Rng + ?Sized>(seq: &[u8], spec: &NoiseSpec, rng: &mut R) -> (Vec<u8>, NoiseCounts) {
    let mut out = Vec::with_capacity(seq.len() + seq.len() / 16 + 4);
    let mut counts = NoiseCounts::default();
    let t_del = spec.p_delete;
    let t_sub = t_del + spec.p_substitute;
    let t_ins = t_sub + spec.p_insert;
    for &b in seq {
        let u: f64 = rng.random();
        if u < t_del {
            counts.deleted += 1;
        } else if u < t_sub {
            let others: Vec<u8> = BASES.iter().copied().filter(|&x| x != b).collect();
            out.push(others[rng.random_range(0..others.len())]);
            counts.substituted += 1;
        } else if u < t_ins {
            out.push(b);
            out.push(BASES[rng.random_range(0..4)]);
            counts.inserted += 1;
        } else {
            out.push(b);
            counts.copied += 1;
        }
    }
    (out, counts)
}

pub fn inject_noise<R: Rng + ?Sized>(seq: &[u8], spec: &NoiseSpec, rng: &mut R) -> Vec<u8> {
    inject_noise_counted(seq, spec, rng).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseDatasetConfig {
    pub read_len: usize,
    pub telomere_bias: f64,
    /// Extra bases drawn before injection so deletions cannot shorten a read.
    pub window_margin: usize,
}

impl Default for NoiseDatasetConfig {
    fn default() -> Self {
        Self {
            read_len: 512,
            telomere_bias: 0.6,
            window_margin: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseRecord {
    pub sequence: Vec<u8>,
    /// 0 clean, 1 noisy.
    pub label: usize,
    /// Reference position the read was taken from.
    pub origin: usize,
}

impl NoiseRecord {
    pub fn to_labeled(&self) -> LabeledExample {
        LabeledExample {
            sequence: self.sequence.clone(),
            label: self.label,
        }
    }
}

/// Balanced clean (even index) / noisy (odd index) reads. Noisy reads are cut
/// from a `read_len + window_margin` window after injection, widening the
/// window in steps of `window_margin` if deletions leave it short.
pub fn build_noise_dataset(reference: &ReferenceSim, n_examples: usize, spec: &NoiseSpec, cfg: &NoiseDatasetConfig, seed: u64) -> Result<Vec<NoiseRecord>> {
    spec.validate()?;
    if n_examples % 2 != 0 {
        return Err(Error::InvalidArgument(format!("n_examples must be even, got {n_examples}")));
    }
    let margin = cfg.window_margin.max(1);
    let room = 8 * margin;
    let sampler = ReadSampler::new(reference, cfg.read_len, room)?;
    (0..n_examples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(seed, &[0x4015e, i as u64]);
            let start = sampler.start(cfg.telomere_bias, &mut rng)?;
            let label = i % 2;
            let sequence = if label == 0 {
                reference.sequence[start..start + cfg.read_len].to_vec()
            } else {
                let mut window = cfg.read_len + margin;
                loop {
                    let noisy = inject_noise(&reference.sequence[start..start + window], spec, &mut rng);
                    if noisy.len() >= cfg.read_len {
                        break noisy[..cfg.read_len].to_vec();
                    }
                    window = (window + margin).min(cfg.read_len + room);
                }
            };
            Ok(NoiseRecord {
                sequence,
                label,
                origin: start,
            })
        })
        .collect()
}

/// Probability that `seq` carries sequencing noise (class 1).
pub fn detect_noise(model: &Model, seq: &[u8]) -> Result<f64> {
    match model.n_classes() {
        Some(2) => {}
        Some(n) => return Err(Error::config(format!("noise detection needs a 2-class head, found {n}"))),
        None => return Err(Error::config("no classification head attached")),
    }
    let max = model.config().max_len;
    Ok(model.classify(&encode(&seq[..seq.len().min(max)]))?[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::reference::simulate_reference_with;

    #[test]
    fn zero_spec_is_identity() {
        let mut rng = rng_from(0, &[]);
        let s = b"ACGTTGCA".to_vec();
        assert_eq!(inject_noise(&s, &NoiseSpec::uniform(0.0), &mut rng), s);
    }

    #[test]
    fn dataset_contract() {
        let r = simulate_reference_with(20_000, 0.5, 128, 1).unwrap();
        let d = build_noise_dataset(&r, 100, &NoiseSpec::default(), &NoiseDatasetConfig::default(), 2).unwrap();
        assert_eq!(d.iter().filter(|e| e.label == 0).count(), 50);
        for e in &d {
            assert_eq!(e.sequence.len(), 512);
            if e.label == 0 {
                assert_eq!(e.sequence, &r.sequence[e.origin..e.origin + 512]);
            }
        }
        assert!(build_noise_dataset(&r, 3, &NoiseSpec::default(), &NoiseDatasetConfig::default(), 2).is_err());
    }
}
