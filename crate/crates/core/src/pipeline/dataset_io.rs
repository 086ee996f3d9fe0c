use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{OutputDir, RunConfig};
use crate::data::{make_dataset, ClipSpec, Dataset, EventWindow, MotionClass, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FILE: &str = "dataset.json";
const DATASET_FORMAT: &str = "vidsal-dataset/1";

#[derive(Serialize, Deserialize)]
struct ClipEntry {
    id: String,
    class: MotionClass,
    label: usize,
    split: String,
    seed: u64,
    event: Option<EventWindow>,
    file: String,
    spec: ClipSpec,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format: String,
    classes: Vec<MotionClass>,
    clips: Vec<ClipEntry>,
}

/// Writes `dataset.json` and `clips/<id>.vten` into `dir`; returns the paths.
pub fn save_dataset(ds: &Dataset, dir: &mut OutputDir) -> Result<Vec<PathBuf>> {
    let mut clips = Vec::new();
    let mut written = Vec::new();
    for (split, samples) in [("train", &ds.train), ("val", &ds.val)] {
        for s in samples {
            let file = format!("clips/{}.vten", s.id);
            written.push(dir.write(&file, &s.clip.to_vten_bytes())?);
            clips.push(ClipEntry {
                id: s.id.clone(),
                class: s.spec.class,
                label: s.label,
                split: split.into(),
                seed: s.spec.seed,
                event: s.event,
                file,
                spec: s.spec.clone(),
            });
        }
    }
    let manifest = DatasetManifest { format: DATASET_FORMAT.into(), classes: ds.classes.clone(), clips };
    written.push(dir.write_json(DATASET_FILE, &manifest)?);
    Ok(written)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::invalid(format!("{}: unsupported dataset format {:?}", path.display(), m.format)));
    }
    let mut ds = Dataset { classes: m.classes, train: Vec::new(), val: Vec::new() };
    for e in m.clips {
        let clip = Tensor::read_vten(dir.join(&e.file))?;
        if e.label >= ds.classes.len() || ds.classes[e.label] != e.class {
            return Err(Error::invalid(format!(
                "{}: clip {} has inconsistent label {}",
                path.display(),
                e.id,
                e.label
            )));
        }
        let sample = Sample { id: e.id, spec: e.spec, label: e.label, clip, event: e.event };
        match e.split.as_str() {
            "train" => ds.train.push(sample),
            "val" => ds.val.push(sample),
            other => return Err(Error::invalid(format!("{}: unknown split {other:?}", path.display()))),
        }
    }
    Ok(ds)
}

/// Generates the configured dataset into `out`.
pub fn run_generate(config: &RunConfig, out: &Path) -> Result<Dataset> {
    let mut dir = OutputDir::create(out)?;
    let d = &config.data;
    let ds = make_dataset(&d.classes, d.clips_per_class, d.split, config.seed)?;
    save_dataset(&ds, &mut dir)?;
    dir.finish("generate", config, vec![])?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::read_manifest;

    #[test]
    fn dataset_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.data.classes = vec![MotionClass::Collide, MotionClass::MoveUp];
        cfg.data.clips_per_class = 3;
        cfg.data.split = 0.5;
        let ds = run_generate(&cfg, tmp.path()).unwrap();
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.classes, ds.classes);
        for (a, b) in ds.train.iter().chain(&ds.val).zip(back.train.iter().chain(&back.val)) {
            assert_eq!((&a.id, a.label, a.event, &a.spec), (&b.id, b.label, b.event, &b.spec));
            assert_eq!(a.clip, b.clip);
        }
        let m = read_manifest(tmp.path()).unwrap();
        assert_eq!(m.outputs.len(), 7);
        for f in &m.outputs {
            assert!(tmp.path().join(f).is_file(), "{f:?}");
        }
    }
}
