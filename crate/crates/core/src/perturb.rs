//! Freeze and reverse perturbations of a clip along its frame axis.
//!
//! Freeze is differentiable in the mask and also exists on the autodiff tape
//! as [`Graph::freeze`](crate::Graph::freeze). Reverse acts on the
//! thresholded mask and is used for evaluation only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activation level above which a mask entry counts as active.
pub const ACTIVE_THRESHOLD: f32 = 0.1;

/// Inclusive range of consecutive active frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubMaskRange {
    pub start: usize,
    pub end: usize,
}

impl SubMaskRange {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn check_len(clip: &Tensor, m: &[f32]) -> Result<usize> {
    let (t, _) = clip.outer_inner();
    if clip.rank() == 0 || m.len() != t {
        return Err(Error::shape("perturb", format!("mask of length {} for clip {:?}", m.len(), clip.shape())));
    }
    Ok(t)
}

/// `out[0] = clip[0]`, `out[i] = (1 - m[i]) clip[i] + m[i] out[i-1]`; `m[0]` is ignored.
pub fn apply_freeze(clip: &Tensor, m: &[f32]) -> Result<Tensor> {
    let t = check_len(clip, m)?;
    let (_, frame) = clip.outer_inner();
    let mut out = clip.to_vec();
    for i in 1..t {
        let (prev, cur) = out.split_at_mut(i * frame);
        let prev = &prev[(i - 1) * frame..];
        for (o, &p) in cur[..frame].iter_mut().zip(prev) {
            *o = (1.0 - m[i]) * *o + m[i] * p;
        }
    }
    Tensor::new(clip.shape().to_vec(), out)
}

/// Elementwise `m > threshold`.
pub fn threshold_mask(m: &[f32], threshold: f32) -> Vec<bool> {
    m.iter().map(|&v| v > threshold).collect()
}

/// Maximal runs of active entries, in ascending order.
pub fn runs(active: &[bool]) -> Vec<SubMaskRange> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in active.iter().chain(std::iter::once(&false)).enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(SubMaskRange { start: s, end: i - 1 });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Maximal runs of `m[i] > threshold`.
pub fn extract_submasks(m: &[f32], threshold: f32) -> Vec<SubMaskRange> {
    runs(&threshold_mask(m, threshold))
}

/// Frame permutation applied by [`apply_reverse`]: `order[i]` is the source frame of output frame `i`.
pub fn reverse_order(m: &[f32], threshold: f32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.len()).collect();
    for r in extract_submasks(m, threshold) {
        order[r.start..=r.end].reverse();
    }
    order
}

/// Reverses the frames inside every sub-mask; other frames are untouched.
pub fn apply_reverse(clip: &Tensor, m: &[f32], threshold: f32) -> Result<Tensor> {
    check_len(clip, m)?;
    let (_, frame) = clip.outer_inner();
    let src = clip.data();
    let mut out = Vec::with_capacity(src.len());
    for i in reverse_order(m, threshold) {
        out.extend_from_slice(&src[i * frame..(i + 1) * frame]);
    }
    Tensor::new(clip.shape().to_vec(), out)
}
