use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Params, TrainConfig, VideoModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FORMAT: &str = "vidsal-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub val_accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub train: TrainConfig,
    /// Class names in label order.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: VideoModel,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    model: ModelConfig,
    meta: TrainingMeta,
    parameters: Vec<ParamEntry>,
}

/// Writes `manifest.json` plus one VTEN file per parameter under `dir/params/`.
pub fn save_checkpoint(ckpt: &ModelCheckpoint, dir: &Path) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut parameters = Vec::new();
    for (name, t) in ckpt.model.params() {
        let file = format!("params/{name}.vten");
        t.write_vten(dir.join(&file))?;
        parameters.push(ParamEntry { name: name.clone(), file, shape: t.shape().to_vec() });
    }
    let manifest = Manifest { format: FORMAT.into(), model: ckpt.model.config(), meta: ckpt.meta.clone(), parameters };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::invalid(format!("{}: unsupported checkpoint format {:?}", path.display(), manifest.format)));
    }
    let mut params = Params::new();
    for e in manifest.parameters {
        let t = Tensor::read_vten(dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::shape(
                "checkpoint",
                format!("{}: manifest {:?}, file {:?}", e.name, e.shape, t.shape()),
            ));
        }
        params.insert(e.name, t);
    }
    Ok(ModelCheckpoint { model: VideoModel::from_parts(manifest.model, params)?, meta: manifest.meta })
}
