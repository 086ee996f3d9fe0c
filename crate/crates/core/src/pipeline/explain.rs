use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compare::write_sequences, CropMode, OutputDir, RunConfig};
use crate::crop::{exhaustive_crop_search, mask_crop_agreement, CropResult};
use crate::data::{EventWindow, Sample};
use crate::error::{Error, Result};
use crate::gradcam::{export_volume, gradcam_at_input, SaliencyVolume};
use crate::mask::optimize_mask;
use crate::metrics::{blob_statistics, BlobSamples, DropRecord};
use crate::models::{load_checkpoint, VideoClassifier};
use crate::perturb::apply_freeze;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropSummary {
    pub start: usize,
    pub end: usize,
    pub score: f32,
    /// IoU of the thresholded mask with the crop.
    pub mask_iou: f64,
    pub intersects_event: Option<bool>,
}

/// Everything learned about one clip, as written to `record.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub clip_id: String,
    pub class_name: String,
    pub model: String,
    pub true_class: usize,
    pub target_class: usize,
    pub predicted_class: usize,
    pub os: f32,
    pub fs: f32,
    pub rs: f32,
    pub drop_ratio: Option<f64>,
    pub drop_difference: Option<f64>,
    pub excluded: bool,
    pub pre_sigmoid: Vec<f32>,
    pub mask: Vec<f32>,
    pub active: Vec<bool>,
    pub mask_length: usize,
    pub loss_trace: Vec<f32>,
    pub final_loss: f32,
    pub event: Option<EventWindow>,
    /// Fraction of event frames the thresholded mask marks active.
    pub event_recall: Option<f64>,
    pub crop: Option<CropSummary>,
    pub blobs: BlobSamples,
}

/// A record plus the in-memory artefacts it summarises.
pub struct ClipExplanation {
    pub record: ExplanationRecord,
    /// Grad-CAM at input resolution.
    pub saliency: SaliencyVolume,
    pub crop: Option<CropResult>,
}

/// Mask, Grad-CAM, blob statistics and (optionally) the crop search for one
/// clip, all for its true class.
pub fn explain_clip(
    model: &dyn VideoClassifier,
    model_tag: &str,
    sample: &Sample,
    class_name: &str,
    config: &RunConfig,
) -> Result<ClipExplanation> {
    let class = sample.label;
    let mask = optimize_mask(model, &sample.clip, class, &config.mask)?;
    let saliency = gradcam_at_input(model, &sample.clip, class)?;
    let blobs = blob_statistics(std::slice::from_ref(&saliency), config.compare.blob_params());
    let drop = DropRecord::new(mask.os as f64, mask.fs as f64, mask.rs as f64, config.compare.drop_epsilon);
    let event_recall =
        sample.event.map(|ev| (ev.start..=ev.end).filter(|&f| mask.active[f]).count() as f64 / ev.len() as f64);
    let run_crop = match config.explain.crop {
        CropMode::None => false,
        CropMode::Events => sample.event.is_some(),
        CropMode::All => true,
    };
    let crop = if run_crop { Some(exhaustive_crop_search(model, &sample.clip, class)?) } else { None };
    let crop_summary = crop.as_ref().map(|c| CropSummary {
        start: c.best.start,
        end: c.best.end,
        score: c.best_score,
        mask_iou: mask_crop_agreement(&mask.active, c.best),
        intersects_event: sample.event.map(|ev| c.best.start <= ev.end && ev.start <= c.best.end),
    });
    let record = ExplanationRecord {
        clip_id: sample.id.clone(),
        class_name: class_name.to_string(),
        model: model_tag.to_string(),
        true_class: sample.label,
        target_class: class,
        predicted_class: mask.predicted_class,
        os: mask.os,
        fs: mask.fs,
        rs: mask.rs,
        drop_ratio: drop.ratio,
        drop_difference: drop.difference,
        excluded: drop.excluded,
        mask_length: mask.mask_length(),
        pre_sigmoid: mask.pre_sigmoid,
        mask: mask.mask,
        active: mask.active,
        loss_trace: mask.loss_trace,
        final_loss: mask.final_loss,
        event: sample.event,
        event_recall,
        crop: crop_summary,
        blobs,
    };
    Ok(ClipExplanation { record, saliency, crop })
}

/// Files of one clip, written into a scratch directory that is renamed into
/// place once complete.
fn write_clip(root: &Path, sample: &Sample, ex: &ClipExplanation, images: bool) -> Result<Vec<PathBuf>> {
    let final_dir = root.join("clips").join(&sample.id);
    let scratch = root.join("clips").join(format!(".{}.partial", sample.id));
    let _ = fs::remove_dir_all(&scratch);
    fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    let mut files = vec![PathBuf::from("record.json")];
    fs::write(scratch.join("record.json"), serde_json::to_string_pretty(&ex.record)? + "\n")
        .map_err(|e| Error::io(&scratch, e))?;
    if let Some(c) = &ex.crop {
        fs::write(scratch.join("crop.json"), serde_json::to_string_pretty(c)? + "\n")
            .map_err(|e| Error::io(&scratch, e))?;
        files.push("crop.json".into());
    }
    let frozen = apply_freeze(&sample.clip, &ex.record.mask)?;
    frozen.write_vten(scratch.join("frozen.vten"))?;
    files.push("frozen.vten".into());
    if images {
        for f in export_volume(&ex.saliency, &sample.clip, &scratch)? {
            files.push(f.strip_prefix(&scratch).unwrap().to_path_buf());
        }
    }
    let _ = fs::remove_dir_all(&final_dir);
    fs::rename(&scratch, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
    Ok(files.into_iter().map(|f| Path::new("clips").join(&sample.id).join(f)).collect())
}

/// Picks the configured clips: explicit ids, or the validation split taken
/// round-robin over classes up to `max_clips`.
fn select_clips<'a>(ds: &'a crate::data::Dataset, config: &RunConfig) -> Result<Vec<&'a Sample>> {
    let all: Vec<&Sample> = ds.train.iter().chain(&ds.val).collect();
    if !config.explain.clips.is_empty() {
        return config
            .explain
            .clips
            .iter()
            .map(|id| {
                all.iter()
                    .copied()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Error::invalid(format!("unknown clip id {id:?}")))
            })
            .collect();
    }
    let mut by_class: Vec<Vec<&Sample>> = vec![Vec::new(); ds.num_classes()];
    for s in &ds.val {
        by_class[s.label].push(s);
    }
    let mut picked = Vec::new();
    let longest = by_class.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for c in &by_class {
            if let Some(&s) = c.get(i) {
                picked.push(s);
            }
        }
    }
    if let Some(n) = config.explain.max_clips {
        picked.truncate(n);
    }
    Ok(picked)
}

/// Explains the selected clips of the dataset in `data_dir` with the
/// checkpoint in `checkpoint_dir`, using up to `jobs` threads.
pub fn run_explain(
    config: &RunConfig,
    checkpoint_dir: &Path,
    data_dir: &Path,
    out: &Path,
    jobs: usize,
) -> Result<Vec<ExplanationRecord>> {
    config.mask.validate()?;
    let ckpt = load_checkpoint(checkpoint_dir)?;
    let ds = super::load_dataset(data_dir)?;
    if ckpt.model.num_classes() != ds.num_classes() {
        return Err(Error::invalid(format!(
            "checkpoint has {} classes, dataset {}",
            ckpt.model.num_classes(),
            ds.num_classes()
        )));
    }
    let clips = select_clips(&ds, config)?;
    let mut dir = OutputDir::create(out)?;
    let tag = ckpt.model.kind().tag();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let root = dir.path().to_path_buf();
    let results: Vec<Result<(ExplanationRecord, Vec<PathBuf>)>> = pool.install(|| {
        clips
            .par_iter()
            .map(|s| {
                let ex = explain_clip(&ckpt.model, tag, s, ds.classes[s.label].name(), config)?;
                let files = write_clip(&root, s, &ex, config.explain.images)?;
                Ok((ex.record, files))
            })
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let (rec, files) = r?;
        dir.track(files);
        records.push(rec);
    }
    let csv = write_sequences(&records)?;
    dir.write("sequences.csv", &csv)?;
    dir.finish(&format!("explain {tag}"), config, vec![checkpoint_dir.to_path_buf(), data_dir.to_path_buf()])?;
    Ok(records)
}
