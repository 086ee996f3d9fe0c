//! File-level pipeline behind the command line: generate a dataset, train a
//! classifier, explain clips, compare two explanation runs.
//!
//! Every command writes into a fresh output directory containing one
//! `run.json` manifest that lists the configuration, seed, inputs and every
//! file written. A failed command removes its output directory.

mod compare;
mod dataset_io;
mod explain;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::MotionClass;
use crate::error::{Error, Result};
use crate::mask::MaskOptConfig;
use crate::metrics::{BlobParams, BLOB_MIN_AREA, BLOB_THRESHOLD, DROP_EPSILON};
use crate::models::{ModelKind, OptimizerKind, TrainConfig};

pub use compare::{load_records, run_compare, SEQUENCE_COLUMNS};
pub use dataset_io::{load_dataset, run_generate, save_dataset, DATASET_FILE};
pub use explain::{explain_clip, run_explain, ClipExplanation, CropSummary, ExplanationRecord};

pub const MANIFEST_FILE: &str = "run.json";
pub const MANIFEST_FORMAT: &str = "vidsal-run/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: Vec<MotionClass>,
    pub clips_per_class: usize,
    pub split: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { classes: MotionClass::ALL.to_vec(), clips_per_class: 50, split: 0.8 }
    }
}

/// Optional overrides of the per-architecture training defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f32>,
    pub momentum: Option<f32>,
    pub weight_decay: Option<f32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub conv3d: TrainOverrides,
    pub convlstm: TrainOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    None,
    /// Only clips with a planted event.
    Events,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Clip ids; empty means the validation split.
    pub clips: Vec<String>,
    /// Cap on the number of clips taken from the validation split.
    pub max_clips: Option<usize>,
    pub crop: CropMode,
    /// Write PGM maps and overlay PNGs per clip.
    pub images: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { clips: Vec::new(), max_clips: None, crop: CropMode::Events, images: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub bins: usize,
    pub blob_threshold: f32,
    pub blob_min_area: usize,
    pub drop_epsilon: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            bins: 10,
            blob_threshold: BLOB_THRESHOLD,
            blob_min_area: BLOB_MIN_AREA,
            drop_epsilon: DROP_EPSILON,
        }
    }
}

impl CompareConfig {
    pub fn blob_params(&self) -> BlobParams {
        BlobParams { threshold: self.blob_threshold, min_area: self.blob_min_area }
    }
}

/// Everything a run can be configured with; loaded from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainSection,
    pub mask: MaskOptConfig,
    pub explain: ExplainConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            data: DataConfig::default(),
            train: TrainSection::default(),
            mask: MaskOptConfig::default(),
            explain: ExplainConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the config snapshot of a `run.json` manifest.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: RunManifest = serde_json::from_str(&text)?;
            return Ok(m.config);
        }
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Training hyperparameters for `kind`: defaults, overrides, run seed.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let mut hp = TrainConfig::default_for(kind);
        let o = match kind {
            ModelKind::Conv3d => &self.train.conv3d,
            ModelKind::Convlstm => &self.train.convlstm,
        };
        hp.epochs = o.epochs.unwrap_or(hp.epochs);
        hp.batch_size = o.batch_size.unwrap_or(hp.batch_size);
        hp.lr = o.lr.unwrap_or(hp.lr);
        hp.weight_decay = o.weight_decay.unwrap_or(hp.weight_decay);
        if let (OptimizerKind::Sgd { momentum }, Some(m)) = (&mut hp.optimizer, o.momentum) {
            *momentum = m;
        }
        hp.seed = self.seed;
        hp
    }
}

/// Provenance of one command's output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to the output directory, sorted.
    pub outputs: Vec<PathBuf>,
    pub wall_clock_seconds: f64,
}

/// A command's output directory. Created empty (a previous run's directory
/// is cleared); removed again unless [`OutputDir::finish`] is called.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<PathBuf>,
    started: Instant,
    done: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<OutputDir> {
        if root.exists() {
            let mut entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
            let empty = entries.next().is_none();
            if !empty && !root.join(MANIFEST_FILE).exists() {
                return Err(Error::invalid(format!(
                    "{} exists and is not an earlier output directory",
                    root.display()
                )));
            }
            fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
        }
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf(), written: Vec::new(), started: Instant::now(), done: false })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Records files written under the directory by other code.
    pub fn track(&mut self, files: impl IntoIterator<Item = PathBuf>) {
        for f in files {
            let rel = f.strip_prefix(&self.root).map(Path::to_path_buf).unwrap_or(f);
            self.written.push(rel);
        }
    }

    /// Writes `bytes` to `rel` via a temporary file and a rename.
    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let path = write_atomic(&self.root, rel.as_ref(), bytes)?;
        self.written.push(rel.as_ref().to_path_buf());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes the manifest and keeps the directory.
    pub fn finish(mut self, command: &str, config: &RunConfig, inputs: Vec<PathBuf>) -> Result<PathBuf> {
        let mut outputs = std::mem::take(&mut self.written);
        outputs.sort();
        outputs.dedup();
        let manifest = RunManifest {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: config.seed,
            config: config.clone(),
            inputs,
            outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = write_atomic(&self.root, Path::new(MANIFEST_FILE), text.as_bytes())?;
        self.done = true;
        Ok(path)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_dir_all(&self.root);
        }
    }
}

pub(crate) fn write_atomic(root: &Path, rel: &Path, bytes: &[u8]) -> Result<PathBuf> {
    let path = root.join(rel);
    let dir = path.parent().unwrap_or(root);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Trains `kind` on the dataset in `data_dir` and saves the checkpoint plus
/// a manifest into `out`.
pub fn run_train(
    config: &RunConfig,
    kind: ModelKind,
    data_dir: &Path,
    out: &Path,
) -> Result<crate::models::ModelCheckpoint> {
    let ds = load_dataset(data_dir)?;
    let mut dir = OutputDir::create(out)?;
    let model = crate::models::ModelConfig::default_for(kind, ds.num_classes());
    let ckpt = crate::models::train(&model, &ds, &config.train_config(kind))?;
    crate::models::save_checkpoint(&ckpt, dir.path())?;
    let mut files = vec![dir.path().join("manifest.json")];
    files.extend(ckpt.model.params().keys().map(|n| dir.path().join(format!("params/{n}.vten"))));
    dir.track(files);
    dir.finish(&format!("train {kind}"), config, vec![data_dir.to_path_buf()])?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.seed = 11;
        cfg.train.convlstm.epochs = Some(3);
        cfg.explain.crop = CropMode::All;
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[mask]\niterations = 1\n[data]\nclips_per_class = 4\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.mask.iterations, 1);
        assert_eq!(cfg.mask.lambda1, 0.01);
        assert_eq!(cfg.data.clips_per_class, 4);
        assert_eq!(cfg.data.classes.len(), 8);
        let hp = cfg.train_config(ModelKind::Convlstm);
        assert_eq!((hp.seed, hp.optimizer), (3, OptimizerKind::Sgd { momentum: 0.2 }));
        assert!(toml::from_str::<RunConfig>("[mask]\nlamda1 = 1.0\n").is_err());
    }

    #[test]
    fn failed_commands_leave_no_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        {
            let mut d = OutputDir::create(&out).unwrap();
            d.write("a/b.txt", b"x").unwrap();
        }
        assert!(!out.exists());
        let mut d = OutputDir::create(&out).unwrap();
        d.write("b.txt", b"y").unwrap();
        d.finish("test", &RunConfig::default(), vec![]).unwrap();
        let m = read_manifest(&out).unwrap();
        assert_eq!(m.outputs, vec![PathBuf::from("b.txt")]);
        // A finished run may be replaced; a foreign directory may not.
        OutputDir::create(&out).unwrap();
        let foreign = tmp.path().join("foreign");
        fs::create_dir_all(&foreign).unwrap();
        fs::write(foreign.join("keep.txt"), b"z").unwrap();
        assert!(OutputDir::create(&foreign).is_err());
        assert!(foreign.join("keep.txt").exists());
    }
}
