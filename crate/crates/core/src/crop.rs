//! Exhaustive temporal-crop search, a baseline for learned masks.
//!
//! Every contiguous range `[start, end]` is scored by the class softmax on a
//! clip whose frames outside the range are frozen to the nearest boundary
//! frame of the range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{batch_scores, VideoClassifier};
use crate::tensor::Tensor;

/// Crops scored per forward pass.
const BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

impl Crop {
    pub fn frames(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropScore {
    pub start: usize,
    pub end: usize,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropResult {
    pub class: usize,
    pub best: Crop,
    pub best_score: f32,
    /// All `T (T + 1) / 2` crops, shortest first, then by start.
    pub table: Vec<CropScore>,
}

/// Ranges in evaluation order: by length, then by start.
pub fn all_crops(t: usize) -> Vec<Crop> {
    (1..=t).flat_map(|len| (0..=t - len).map(move |start| Crop { start, end: start + len - 1 })).collect()
}

/// `clip` with frame `i` replaced by frame `clamp(i, start, end)`.
pub fn crop_clip(clip: &Tensor, crop: Crop) -> Result<Tensor> {
    let t = clip.shape().first().copied().unwrap_or(0);
    if clip.rank() != 4 || crop.start > crop.end || crop.end >= t {
        return Err(Error::invalid(format!("crop {crop:?} outside a clip of shape {:?}", clip.shape())));
    }
    let frame = clip.len() / t;
    let d = clip.data();
    let mut out = Vec::with_capacity(clip.len());
    for i in 0..t {
        let src = i.clamp(crop.start, crop.end);
        out.extend_from_slice(&d[src * frame..(src + 1) * frame]);
    }
    Tensor::new(clip.shape().to_vec(), out)
}

/// Scores every crop of `clip` for `class` and returns the best one. Ties
/// go to the shorter crop, then the earlier start.
pub fn exhaustive_crop_search(model: &dyn VideoClassifier, clip: &Tensor, class: usize) -> Result<CropResult> {
    if class >= model.num_classes() {
        return Err(Error::invalid(format!("class {class} out of range for {} classes", model.num_classes())));
    }
    let t = clip.shape().first().copied().unwrap_or(0);
    if clip.rank() != 4 || t == 0 {
        return Err(Error::invalid(format!("crop search needs a [T>=1, H, W, C] clip, got {:?}", clip.shape())));
    }
    let crops = all_crops(t);
    let mut table = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(BATCH) {
        let clips = chunk.iter().map(|&c| crop_clip(clip, c)).collect::<Result<Vec<_>>>()?;
        for (c, s) in chunk.iter().zip(batch_scores(model, &clips)?) {
            table.push(CropScore { start: c.start, end: c.end, score: s[class] });
        }
    }
    let mut best = 0;
    for (i, c) in table.iter().enumerate() {
        // Strict: earlier entries are shorter or start earlier.
        if c.score > table[best].score {
            best = i;
        }
    }
    Ok(CropResult {
        class,
        best: Crop { start: table[best].start, end: table[best].end },
        best_score: table[best].score,
        table,
    })
}

/// Intersection over union of the active frames and the crop's frames.
pub fn mask_crop_agreement(active: &[bool], crop: Crop) -> f64 {
    let mask = |i: usize| active.get(i).copied().unwrap_or(false);
    let n = active.len().max(crop.end + 1);
    let inter = (0..n).filter(|&i| mask(i) && crop.contains(i)).count();
    let union = (0..n).filter(|&i| mask(i) || crop.contains(i)).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
