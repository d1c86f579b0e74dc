//! Run configuration: defaults, JSON file, `--set` overrides, in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Preset};
use crate::numerics::rng::derive_seed;
use crate::tasks::{NoiseDatasetConfig, NoiseSpec};
use crate::training::{FinetuneConfig, PretrainConfig};

const SEED_MODEL: u64 = 0x30de1;
const SEED_PRETRAIN: u64 = 0x9e7a;
const SEED_FINETUNE: u64 = 0xf17e;
const SEED_NOISE: u64 = 0x4015e;
const SEED_REFERENCE: u64 = 0x43f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    /// Field-level replacements applied on top of the preset.
    pub overrides: Map<String, Value>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::Toy,
            overrides: Map::new(),
        }
    }
}

impl ModelSection {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut base = serde_json::to_value(ModelConfig::preset(self.preset))?;
        merge(&mut base, &Value::Object(self.overrides.clone()));
        let cfg: ModelConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    /// FASTA to cut reads from; a synthetic reference is simulated when absent.
    pub fasta: Option<PathBuf>,
    pub length: usize,
    pub motif_fraction: f64,
    pub region_len: usize,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            fasta: None,
            length: 100_000,
            motif_fraction: 0.01,
            region_len: crate::tasks::reference::DEFAULT_REGION_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub n_examples: usize,
    pub spec: NoiseSpec,
    pub dataset: NoiseDatasetConfig,
    pub reference: ReferenceSection,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            n_examples: 1000,
            spec: NoiseSpec::default(),
            dataset: NoiseDatasetConfig::default(),
            reference: ReferenceSection::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MutationSection {
    /// Number of parents to process from the input file; 0 means all.
    pub limit: usize,
}

impl Default for MutationSection {
    fn default() -> Self {
        Self { limit: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: Vec<PathBuf>,
    pub train: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    /// Starting checkpoint for fine-tuning, detection, mutation, export.
    pub checkpoint: Option<PathBuf>,
    pub noise_checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub truths: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub noise: NoiseSection,
    pub mutation: MutationSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelSection::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            noise: NoiseSection::default(),
            mutation: MutationSection::default(),
            paths: PathsSection::default(),
        }
    }
}

/// Seeds handed to each subsystem, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedSeeds {
    pub model: u64,
    pub pretrain: u64,
    pub finetune: u64,
    pub noise: u64,
    pub reference: u64,
}

impl DerivedSeeds {
    pub fn from_run_seed(seed: u64) -> Self {
        Self {
            model: derive_seed(seed, &[SEED_MODEL]),
            pretrain: derive_seed(seed, &[SEED_PRETRAIN]),
            finetune: derive_seed(seed, &[SEED_FINETUNE]),
            noise: derive_seed(seed, &[SEED_NOISE]),
            reference: derive_seed(seed, &[SEED_REFERENCE]),
        }
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Parses `a.b.c=value`. The value is read as JSON when it parses, otherwise
/// as a bare string.
pub fn parse_assignment(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {text:?} is not key=value")))?;
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::config(format!("override key {key:?} has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path, value))
}

fn nest(path: &[String], value: Value) -> Value {
    path.iter().rev().fold(value, |acc, k| {
        let mut m = Map::new();
        m.insert(k.clone(), acc);
        Value::Object(m)
    })
}

/// Everything a command line can contribute to a config.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub steps: Option<(StepsTarget, usize)>,
    /// Assignments from dedicated flags, applied before `sets`.
    pub paths: Vec<(Vec<String>, Value)>,
    pub sets: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsTarget {
    Pretrain,
    Finetune,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl RunConfig {
    /// Layers defaults, the config file, explicit flags and `--set` overrides,
    /// then rejects unknown keys and derives subsystem seeds.
    pub fn resolve(src: &ConfigSources) -> Result<(RunConfig, DerivedSeeds)> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = &src.file {
            let file = read_json(path)?;
            if !file.is_object() {
                return Err(Error::config(format!("{}: config must be a JSON object", path.display())));
            }
            merge(&mut value, &file);
        }
        if let Some(seed) = src.seed {
            merge(&mut value, &nest(&["seed".into()], seed.into()));
        }
        if let Some(p) = src.preset {
            merge(&mut value, &nest(&["model".into(), "preset".into()], serde_json::to_value(p)?));
        }
        if let Some((target, n)) = src.steps {
            let section = match target {
                StepsTarget::Pretrain => "pretrain",
                StepsTarget::Finetune => "finetune",
            };
            merge(&mut value, &nest(&[section.into(), "steps".into()], n.into()));
        }
        for (path, v) in &src.paths {
            merge(&mut value, &nest(path, v.clone()));
        }
        for s in &src.sets {
            let (path, v) = parse_assignment(s)?;
            merge(&mut value, &nest(&path, v));
        }
        let mut cfg: RunConfig = serde_json::from_value(value)?;
        let seeds = DerivedSeeds::from_run_seed(cfg.seed);
        cfg.pretrain.seed = seeds.pretrain;
        cfg.finetune.seed = seeds.finetune;
        cfg.noise.seed = seeds.noise;
        let resolved = cfg.model.resolve()?;
        cfg.model.overrides = match serde_json::to_value(resolved)? {
            Value::Object(m) => m,
            _ => unreachable!("model config serializes to an object"),
        };
        Ok((cfg, seeds))
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Hex SHA-256 of the resolved config JSON.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_pretty_json()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nested_fields() {
        let src = ConfigSources {
            sets: vec!["pretrain.batch_size=3".into(), "model.overrides.d_ff=96".into()],
            steps: Some((StepsTarget::Pretrain, 7)),
            ..Default::default()
        };
        let (cfg, _) = RunConfig::resolve(&src).unwrap();
        assert_eq!(cfg.pretrain.batch_size, 3);
        assert_eq!(cfg.pretrain.steps, 7);
        assert_eq!(cfg.model.resolve().unwrap().d_ff, 96);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["pretrain.bogus=1", "nonsense=2", "model.overrides.width=3"] {
            let src = ConfigSources {
                sets: vec![bad.into()],
                ..Default::default()
            };
            assert!(RunConfig::resolve(&src).is_err(), "{bad}");
        }
    }

    #[test]
    fn resolved_config_reloads_to_itself() {
        let src = ConfigSources {
            seed: Some(11),
            ..Default::default()
        };
        let (cfg, seeds) = RunConfig::resolve(&src).unwrap();
        assert_eq!(cfg.pretrain.seed, seeds.pretrain);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, cfg.to_pretty_json().unwrap()).unwrap();
        let (again, _) = RunConfig::resolve(&ConfigSources {
            file: Some(path),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.digest().unwrap(), cfg.digest().unwrap());
    }

    #[test]
    fn seeds_differ_by_subsystem() {
        let s = DerivedSeeds::from_run_seed(1);
        assert_ne!(s.model, s.pretrain);
        assert_ne!(DerivedSeeds::from_run_seed(2), s);
    }
}
