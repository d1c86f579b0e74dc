//! Checkpoint = JSON manifest + flat little-endian `f32` parameter blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::fsio::{f32_blob, read, read_f32s, write_atomic};
use crate::numerics::{AdamWConfig, AdamWState, NdArray, ParamId};
use crate::tokenizer::Vocabulary;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
const FORMAT: &str = "enbedkit-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentRecord {
    pub name: String,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub config: AdamWConfig,
    pub step: u64,
    /// Parameters with moments, in blob order (`m` then `v` per entry).
    pub moments: Vec<MomentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub seed: u64,
    pub step: u64,
    pub n_classes: Option<usize>,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub step: u64,
    pub optimizer: Option<AdamWState>,
}

pub fn save_checkpoint(dir: &Path, model: &Model, step: u64, optimizer: Option<&AdamWState>) -> Result<()> {
    let store = model.params();
    let params = store
        .entries()
        .iter()
        .map(|e| ParamRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
        })
        .collect();
    let optimizer_record = optimizer.map(|opt| {
        let mut moments = Vec::new();
        let mut arrays: Vec<&[f64]> = Vec::new();
        for id in store.ids() {
            if let Some((m, v, steps)) = opt.moments(id) {
                moments.push(MomentRecord {
                    name: store.name(id).to_string(),
                    steps,
                });
                arrays.push(m.data());
                arrays.push(v.data());
            }
        }
        (
            OptimizerRecord {
                config: opt.config,
                step: opt.step,
                moments,
            },
            f32_blob(arrays.into_iter()),
        )
    });
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        vocabulary: Vocabulary::default(),
        seed: model.seed(),
        step,
        n_classes: model.n_classes(),
        params,
        optimizer: optimizer_record.as_ref().map(|(r, _)| r.clone()),
    };
    write_atomic(&dir.join(PARAMS_FILE), &f32_blob(store.entries().iter().map(|e| e.value.data())))?;
    if let Some((_, blob)) = &optimizer_record {
        write_atomic(&dir.join(OPTIMIZER_FILE), blob)?;
    }
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let manifest: CheckpointManifest = serde_json::from_slice(&read(&dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT {
        return Err(Error::config(format!("unknown checkpoint format {:?}", manifest.format)));
    }
    if manifest.vocabulary != Vocabulary::default() {
        return Err(Error::config("checkpoint vocabulary layout differs from this build"));
    }
    let mut model = Model::build(manifest.config.clone(), manifest.seed)?;
    if let Some(n) = manifest.n_classes {
        model.attach_classifier(n)?;
    }
    if manifest.params.len() != model.params().len() {
        return Err(Error::config(format!(
            "checkpoint has {} parameters, model expects {}",
            manifest.params.len(),
            model.params().len()
        )));
    }
    let blob = read(&dir.join(PARAMS_FILE))?;
    let mut offset = 0;
    for (i, rec) in manifest.params.iter().enumerate() {
        let id = ParamId(i);
        let current = model.params().entry(id);
        if current.name != rec.name || current.value.shape() != rec.shape.as_slice() {
            return Err(Error::config(format!(
                "parameter {i} is {} {:?} in the checkpoint but {} {:?} in the model",
                rec.name,
                rec.shape,
                current.name,
                current.value.shape()
            )));
        }
        let data = read_f32s(&blob, &mut offset, current.value.len())?;
        *model.params_mut().get_mut(id) = NdArray::new(rec.shape.clone(), data)?;
    }
    if offset != blob.len() {
        return Err(Error::config("parameter blob has trailing bytes"));
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(rec) => {
            let blob = read(&dir.join(OPTIMIZER_FILE))?;
            let mut state = AdamWState::new(rec.config, model.params());
            state.step = rec.step;
            let mut offset = 0;
            for m in &rec.moments {
                let id = model
                    .params()
                    .find(&m.name)
                    .ok_or_else(|| Error::config(format!("optimizer moments for unknown parameter {}", m.name)))?;
                let shape = model.params().get(id).shape().to_vec();
                let n = model.params().get(id).len();
                let mv = NdArray::new(shape.clone(), read_f32s(&blob, &mut offset, n)?)?;
                let vv = NdArray::new(shape, read_f32s(&blob, &mut offset, n)?)?;
                state.set_moments(id, mv, vv, m.steps);
            }
            Some(state)
        }
    };
    Ok(LoadedCheckpoint {
        model,
        step: manifest.step,
        optimizer,
    })
}
