//! Learned temporal masks.
//!
//! The mask is a pre-sigmoid vector `p`; its activation `m = sigmoid(p)`
//! drives the freeze perturbation. The objective is
//!
//! ```text
//! lambda1 * sum |m_t| + lambda2 * sum |m_{t+1} - m_t|^beta + F_c(freeze(clip, m))
//! ```
//!
//! where `F_c` is the softmax score of the target class. It is minimised with
//! full-batch Adam.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{argmax, class_scores, VideoClassifier};
use crate::optim::{Adam, AdamConfig};
use crate::perturb::{apply_freeze, apply_reverse, threshold_mask, ACTIVE_THRESHOLD};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskOptConfig {
    pub lambda1: f32,
    pub lambda2: f32,
    pub beta: f32,
    pub lr: f32,
    pub iterations: usize,
    pub threshold: f32,
    /// Pre-sigmoid starting level of every frame.
    pub init_level: f32,
    /// Added to the central third of frames and subtracted elsewhere.
    pub init_spread: f32,
}

impl Default for MaskOptConfig {
    fn default() -> Self {
        MaskOptConfig {
            lambda1: 0.01,
            lambda2: 0.02,
            beta: 3.0,
            lr: 0.001,
            iterations: 300,
            threshold: ACTIVE_THRESHOLD,
            init_level: 0.0,
            init_spread: 1.5,
        }
    }
}

impl MaskOptConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda1, self.lambda2, self.beta, self.lr, self.init_level, self.init_spread]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid("mask weights must be finite and >= 0"));
        }
        if self.beta < 1.0 {
            return Err(Error::invalid(format!("TV exponent {} must be >= 1", self.beta)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("mask optimization needs at least one iteration"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    /// Central third of the frames raised by `init_spread`, the rest lowered.
    pub fn initial_mask(&self, t: usize) -> Vec<f32> {
        let (lo, hi) = (t / 3, t - t / 3);
        (0..t)
            .map(|i| {
                if (lo..hi).contains(&i) {
                    self.init_level + self.init_spread
                } else {
                    self.init_level - self.init_spread
                }
            })
            .collect()
    }
}

/// `(sum |m|, sum |m[t+1] - m[t]|^beta)` before weighting.
pub fn regularizers(m: &[f32], beta: f32) -> (f64, f64) {
    let l1 = m.iter().map(|&v| v.abs() as f64).sum();
    let tv = m.windows(2).map(|w| ((w[1] - w[0]).abs() as f64).powf(beta as f64)).sum();
    (l1, tv)
}

/// Builds the objective on `g` for a mask activation `m` (a `[T]` node).
pub fn mask_loss(
    g: &mut Graph,
    m: Var,
    clip: Var,
    model: &dyn VideoClassifier,
    class: usize,
    cfg: &MaskOptConfig,
) -> Result<Var> {
    let t = g.shape(m)[0];
    if class >= model.num_classes() {
        return Err(Error::invalid(format!("class {class} out of range for {} classes", model.num_classes())));
    }
    let abs = g.abs(m)?;
    let l1 = g.sum(abs)?;
    let l1 = g.scale(l1, cfg.lambda1)?;
    let mut loss = l1;
    if t >= 2 {
        let next = g.slice(m, 0, 1, t - 1)?;
        let prev = g.slice(m, 0, 0, t - 1)?;
        let d = g.sub(next, prev)?;
        let d = g.abs(d)?;
        let d = g.powf(d, cfg.beta)?;
        let tv = g.sum(d)?;
        let tv = g.scale(tv, cfg.lambda2)?;
        loss = g.add(loss, tv)?;
    }
    let perturbed = g.freeze(clip, m)?;
    let out = model.forward(g, perturbed)?;
    let probs = g.softmax(out.logits)?;
    let score = g.slice(probs, 1, class, 1)?;
    let score = g.sum(score)?;
    g.add(loss, score)
}

/// Loss value and gradient with respect to the pre-sigmoid vector.
pub fn loss_and_grad(
    pre: &[f32],
    clip: &Tensor,
    model: &dyn VideoClassifier,
    class: usize,
    cfg: &MaskOptConfig,
) -> Result<(f32, Vec<f32>)> {
    let mut g = Graph::new();
    let p = g.variable(Tensor::from_vec(pre.to_vec()))?;
    let x = g.constant(clip.clone())?;
    let m = g.sigmoid(p)?;
    let loss = mask_loss(&mut g, m, x, model, class, cfg)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, grads.get_or_zeros(p, &[pre.len()]).to_vec()))
}

/// Converged mask with its original/freeze/reverse scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskResult {
    pub target_class: usize,
    pub predicted_class: usize,
    pub pre_sigmoid: Vec<f32>,
    /// Activation `sigmoid(pre_sigmoid)`.
    pub mask: Vec<f32>,
    pub active: Vec<bool>,
    pub os: f32,
    pub fs: f32,
    pub rs: f32,
    /// Loss before each Adam step.
    pub loss_trace: Vec<f32>,
    /// Loss at the converged mask.
    pub final_loss: f32,
}

impl MaskResult {
    pub fn mask_length(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

pub fn sigmoid_vec(p: &[f32]) -> Vec<f32> {
    p.iter().map(|&v| crate::autodiff::sigmoid(v)).collect()
}

/// Learns a temporal mask for `class` on `clip` (a single `[T, H, W, C]` clip).
pub fn optimize_mask(
    model: &dyn VideoClassifier,
    clip: &Tensor,
    class: usize,
    cfg: &MaskOptConfig,
) -> Result<MaskResult> {
    cfg.validate()?;
    let t = clip.shape().first().copied().unwrap_or(0);
    if clip.rank() != 4 || t < 2 {
        return Err(Error::invalid(format!("mask optimization needs a [T>=2, H, W, C] clip, got {:?}", clip.shape())));
    }
    let original = class_scores(model, clip)?;
    if class >= original.len() {
        return Err(Error::invalid(format!("class {class} out of range for {} classes", original.len())));
    }
    let mut pre = cfg.initial_mask(t);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &[t]);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (loss, grad) = loss_and_grad(&pre, clip, model, class, cfg)?;
        if !loss.is_finite() {
            return Err(Error::MaskNan(it));
        }
        trace.push(loss);
        adam.begin_step();
        adam.update(0, &mut pre, &grad);
    }
    let (final_loss, _) = loss_and_grad(&pre, clip, model, class, cfg)?;
    if !final_loss.is_finite() {
        return Err(Error::MaskNan(cfg.iterations));
    }
    let mask = sigmoid_vec(&pre);
    let fs = class_scores(model, &apply_freeze(clip, &mask)?)?[class];
    let rs = class_scores(model, &apply_reverse(clip, &mask, cfg.threshold)?)?[class];
    Ok(MaskResult {
        target_class: class,
        predicted_class: argmax(&original),
        active: threshold_mask(&mask, cfg.threshold),
        pre_sigmoid: pre,
        mask,
        os: original[class],
        fs,
        rs,
        loss_trace: trace,
        final_loss,
    })
}
