//! The two video classifiers: a small 3D CNN and a stacked convolutional LSTM.
//!
//! Both take `[N, T, H, W, C]` clip batches (a single `[T, H, W, C]` clip is
//! treated as `N = 1`) and expose the activations Grad-CAM reads from.

mod checkpoint;
mod conv3d;
mod convlstm;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, TrainingMeta};
pub use conv3d::{Conv3dLayer, Conv3dNet, Conv3dNetConfig};
pub use convlstm::{convlstm_step, ConvLstmConfig, ConvLstmLayer, ConvLstmNet, ConvLstmState, LstmCell};
pub use train::{evaluate_accuracy, train, OptimizerKind, TrainConfig};

/// Named parameter tensors, iterated in name order.
pub type Params = BTreeMap<String, Tensor>;

/// Graph handles of one model's parameters.
pub(crate) type Bound = BTreeMap<String, Var>;

pub(crate) fn bind(g: &mut Graph, params: &Params, trainable: impl Fn(&str) -> bool) -> Result<Bound> {
    params
        .iter()
        .map(|(k, v)| {
            let var = if trainable(k) { g.variable(v.clone())? } else { g.constant(v.clone())? };
            Ok((k.clone(), var))
        })
        .collect()
}

pub(crate) fn param(bound: &Bound, name: &str) -> Result<Var> {
    bound.get(name).copied().ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
}

/// Logits and the Grad-CAM target activations of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[N, K]`
    pub logits: Var,
    /// `[N, T', H', W', C']`
    pub activations: Var,
}

/// What the explanation tools need from a classifier.
pub trait VideoClassifier: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Expected `[T, H, W, C]` of one clip.
    fn clip_shape(&self) -> [usize; 4];

    /// Evaluation-mode forward pass. Parameters enter the graph as constants,
    /// so a backward pass only reaches the clip.
    fn forward(&self, g: &mut Graph, clips: Var) -> Result<ModelOutput>;

    /// Input frames summarised by each activation timestep. Every input frame
    /// appears exactly once.
    fn activation_frames(&self) -> Vec<Vec<usize>>;
}

/// Softmax class scores of a single clip.
pub fn class_scores(model: &dyn VideoClassifier, clip: &Tensor) -> Result<Vec<f32>> {
    Ok(batch_scores(model, std::slice::from_ref(clip))?.remove(0))
}

/// Softmax class scores for each clip, evaluated in one batch.
pub fn batch_scores(model: &dyn VideoClassifier, clips: &[Tensor]) -> Result<Vec<Vec<f32>>> {
    let batch = Tensor::stack(clips)?;
    let mut g = Graph::new();
    let x = g.constant(batch)?;
    let out = model.forward(&mut g, x)?;
    let probs = g.softmax(out.logits)?;
    let k = model.num_classes();
    Ok(g.value(probs).data().chunks(k).map(<[f32]>::to_vec).collect())
}

pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Checks a clip batch against the model's expected shape and returns `N`.
pub(crate) fn check_clips(g: &Graph, clips: Var, want: [usize; 4]) -> Result<usize> {
    let s = g.shape(clips);
    match s.len() {
        4 if s == want => Ok(1),
        5 if s[1..] == want => Ok(s[0]),
        _ => Err(Error::shape("model input", format!("expected [N, {want:?}], got {s:?}"))),
    }
}

/// Even split of `t` frames over `t_out` activation steps.
pub(crate) fn proportional_frames(t: usize, t_out: usize) -> Vec<Vec<usize>> {
    (0..t_out).map(|i| (i * t / t_out..(i + 1) * t / t_out).collect()).collect()
}

pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f32) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_parts(shape, data)
}

/// Architecture tag plus configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum ModelConfig {
    Conv3d(Conv3dNetConfig),
    Convlstm(ConvLstmConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Conv3d,
    Convlstm,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Conv3d => "conv3d",
            ModelKind::Convlstm => "convlstm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv3d" | "3d" | "i3d" => Ok(ModelKind::Conv3d),
            "convlstm" | "clstm" | "c-lstm" => Ok(ModelKind::Convlstm),
            _ => Err(Error::invalid(format!("unknown model kind {s:?} (conv3d, convlstm)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind, num_classes: usize) -> ModelConfig {
        match kind {
            ModelKind::Conv3d => ModelConfig::Conv3d(Conv3dNetConfig { num_classes, ..Default::default() }),
            ModelKind::Convlstm => ModelConfig::Convlstm(ConvLstmConfig { num_classes, ..Default::default() }),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Conv3d(_) => ModelKind::Conv3d,
            ModelConfig::Convlstm(_) => ModelKind::Convlstm,
        }
    }
}

/// Either architecture behind one type, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub enum VideoModel {
    Conv3d(Conv3dNet),
    Convlstm(ConvLstmNet),
}

impl VideoModel {
    pub fn init(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<VideoModel> {
        Ok(match config {
            ModelConfig::Conv3d(c) => VideoModel::Conv3d(Conv3dNet::init(c.clone(), rng)?),
            ModelConfig::Convlstm(c) => VideoModel::Convlstm(ConvLstmNet::init(c.clone(), rng)?),
        })
    }

    pub fn from_parts(config: ModelConfig, params: Params) -> Result<VideoModel> {
        Ok(match config {
            ModelConfig::Conv3d(c) => VideoModel::Conv3d(Conv3dNet::from_params(c, params)?),
            ModelConfig::Convlstm(c) => VideoModel::Convlstm(ConvLstmNet::from_params(c, params)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            VideoModel::Conv3d(m) => ModelConfig::Conv3d(m.config.clone()),
            VideoModel::Convlstm(m) => ModelConfig::Convlstm(m.config.clone()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }

    pub fn params(&self) -> &Params {
        match self {
            VideoModel::Conv3d(m) => &m.params,
            VideoModel::Convlstm(m) => &m.params,
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        match self {
            VideoModel::Conv3d(m) => &mut m.params,
            VideoModel::Convlstm(m) => &mut m.params,
        }
    }

    /// Names of the parameters updated by training (excludes batch-norm running statistics).
    pub fn trainable_names(&self) -> Vec<String> {
        self.params().keys().filter(|k| !convlstm::is_buffer(k)).cloned().collect()
    }

    pub(crate) fn forward_bound(
        &self,
        g: &mut Graph,
        clips: Var,
        p: &Bound,
        train: Option<&mut ChaCha8Rng>,
    ) -> Result<(ModelOutput, Vec<(String, BatchStats)>)> {
        match self {
            VideoModel::Conv3d(m) => m.forward_bound(g, clips, p, train),
            VideoModel::Convlstm(m) => m.forward_bound(g, clips, p, train),
        }
    }

    fn inner(&self) -> &dyn VideoClassifier {
        match self {
            VideoModel::Conv3d(m) => m,
            VideoModel::Convlstm(m) => m,
        }
    }
}

impl VideoClassifier for VideoModel {
    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }

    fn clip_shape(&self) -> [usize; 4] {
        self.inner().clip_shape()
    }

    fn forward(&self, g: &mut Graph, clips: Var) -> Result<ModelOutput> {
        self.inner().forward(g, clips)
    }

    fn activation_frames(&self) -> Vec<Vec<usize>> {
        self.inner().activation_frames()
    }
}

/// Checks that `params` holds exactly the expected names and shapes.
pub(crate) fn check_params(expected: &[(String, Vec<usize>)], params: &Params) -> Result<()> {
    if expected.len() != params.len() {
        return Err(Error::invalid(format!("expected {} parameters, got {}", expected.len(), params.len())));
    }
    for (name, shape) in expected {
        match params.get(name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::shape("parameters", format!("{name}: expected {shape:?}, got {:?}", t.shape())))
            }
            None => return Err(Error::invalid(format!("missing parameter {name}"))),
        }
    }
    Ok(())
}
