use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bind, check_clips, check_params, param, uniform_init, Bound, ModelOutput, Params, VideoClassifier};
use crate::autodiff::{BatchStats, Graph, Var};
use crate::data::{CLIP_LEN, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmLayer {
    pub filters: usize,
    /// Square kernel extent, odd. The hidden-to-hidden convolution uses "same" padding.
    pub kernel: usize,
    /// Spatial stride of the input-to-hidden convolution.
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmConfig {
    pub clip_len: usize,
    pub frame_size: usize,
    pub in_channels: usize,
    pub layers: Vec<ConvLstmLayer>,
    /// Spatial max-pool window after each layer's batch norm.
    pub pool: usize,
    pub num_classes: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
    /// Initial forget-gate bias.
    pub forget_bias: f32,
}

impl Default for ConvLstmConfig {
    fn default() -> Self {
        let layer = ConvLstmLayer { filters: 16, kernel: 5, stride: 2 };
        ConvLstmConfig {
            clip_len: CLIP_LEN,
            frame_size: FRAME_SIZE,
            in_channels: 1,
            layers: vec![layer.clone(), layer],
            pool: 2,
            num_classes: 8,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            forget_bias: 1.0,
        }
    }
}

impl ConvLstmConfig {
    /// Spatial extent of the hidden state of each layer, then of the head input.
    pub fn spatial_extents(&self) -> Result<(Vec<usize>, usize)> {
        let mut s = self.frame_size;
        let mut hidden = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 || l.stride == 0 || l.kernel > s + 2 * (l.kernel / 2) {
                return Err(Error::invalid(format!(
                    "lstm{i}: kernel {} / stride {} on extent {s}",
                    l.kernel, l.stride
                )));
            }
            let h = (s + 2 * (l.kernel / 2) - l.kernel) / l.stride + 1;
            if self.pool == 0 || h % self.pool != 0 {
                return Err(Error::invalid(format!("lstm{i}: pool {} does not divide extent {h}", self.pool)));
            }
            hidden.push(h);
            s = h / self.pool;
        }
        Ok((hidden, s))
    }

    fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if self.layers.is_empty() || self.num_classes < 2 || self.clip_len == 0 {
            return Err(Error::invalid("convlstm net needs layers, >= 2 classes and >= 1 frame"));
        }
        let (_, head) = self.spatial_extents()?;
        let mut cin = self.in_channels;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (k, f) = (l.kernel, l.filters);
            out.push((format!("lstm{i}.wx"), vec![1, k, k, cin, 4 * f]));
            out.push((format!("lstm{i}.wh"), vec![1, k, k, f, 4 * f]));
            out.push((format!("lstm{i}.bias"), vec![4 * f]));
            for p in ["gamma", "beta", "running_mean", "running_var"] {
                out.push((format!("bn{i}.{p}"), vec![f]));
            }
            cin = f;
        }
        out.push(("fc.weight".into(), vec![head * head * cin, self.num_classes]));
        out.push(("fc.bias".into(), vec![self.num_classes]));
        Ok(out)
    }
}

/// Hidden and cell maps of one layer, each `[N, 1, H', W', F]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvLstmState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmState {
    pub fn zeros(g: &mut Graph, n: usize, size: usize, filters: usize) -> Result<Self> {
        let z = Tensor::zeros(vec![n, 1, size, size, filters]);
        Ok(ConvLstmState { h: g.constant(z.clone())?, c: g.constant(z)? })
    }
}

/// Weights of one ConvLSTM layer on a graph. Gate channels are ordered `[i, f, o, g]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    /// `[1, k, k, Cin, 4F]`
    pub wx: Var,
    /// `[1, k, k, F, 4F]`
    pub wh: Var,
    /// `[4F]`
    pub bias: Var,
    pub stride: usize,
}

impl LstmCell {
    fn pad(&self, g: &Graph) -> usize {
        g.shape(self.wh)[1] / 2
    }

    fn filters(&self, g: &Graph) -> usize {
        g.shape(self.wh)[3]
    }

    /// Input-to-hidden pre-activations plus bias for a `[N, T, H, W, Cin]` sequence.
    fn input_gates(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let p = self.pad(g);
        let xg = g.conv3d(x, self.wx, [1, self.stride, self.stride], [0, p, p])?;
        g.add_bias(xg, self.bias)
    }

    /// State update given the input pre-activations `xg` of one step.
    fn update(&self, g: &mut Graph, xg: Var, state: &ConvLstmState) -> Result<ConvLstmState> {
        if g.shape(xg)[..4] != g.shape(state.h)[..4] || g.shape(state.h) != g.shape(state.c) {
            return Err(Error::shape(
                "convlstm_step",
                format!("input gates {:?} vs state {:?} / {:?}", g.shape(xg), g.shape(state.h), g.shape(state.c)),
            ));
        }
        let p = self.pad(g);
        let f = self.filters(g);
        let hg = g.conv3d(state.h, self.wh, [1, 1, 1], [0, p, p])?;
        let pre = g.add(xg, hg)?;
        let gate = |g: &mut Graph, k: usize| g.slice(pre, 4, k * f, f);
        let i = gate(g, 0)?;
        let i = g.sigmoid(i)?;
        let fg = gate(g, 1)?;
        let fg = g.sigmoid(fg)?;
        let o = gate(g, 2)?;
        let o = g.sigmoid(o)?;
        let cand = gate(g, 3)?;
        let cand = g.tanh(cand)?;
        let keep = g.mul(fg, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let h = g.mul(o, tc)?;
        Ok(ConvLstmState { h, c })
    }
}

/// One ConvLSTM step on a `[N, 1, H, W, Cin]` input frame.
pub fn convlstm_step(g: &mut Graph, x: Var, state: &ConvLstmState, cell: &LstmCell) -> Result<ConvLstmState> {
    let xg = cell.input_gates(g, x)?;
    cell.update(g, xg, state)
}

/// Stacked ConvLSTM layers, each followed by batch norm and spatial max-pool,
/// with a linear head on the last timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmNet {
    pub config: ConvLstmConfig,
    pub params: Params,
}

pub(crate) fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl ConvLstmNet {
    /// Glorot-uniform weights, zero biases except the forget gate.
    pub fn init(config: ConvLstmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = Params::new();
        for (name, shape) in config.param_shapes()? {
            let t = if name.ends_with(".wx") || name.ends_with(".wh") {
                let fan_in = shape[1] * shape[2] * shape[3];
                let fan_out = shape[1] * shape[2] * shape[4] / 4;
                uniform_init(rng, shape, (6.0 / (fan_in + fan_out) as f32).sqrt())
            } else if name == "fc.weight" {
                let bound = (6.0 / (shape[0] + shape[1]) as f32).sqrt();
                uniform_init(rng, shape, bound)
            } else if name.ends_with(".bias") && name.starts_with("lstm") {
                let f = shape[0] / 4;
                let mut b = vec![0.0; shape[0]];
                b[f..2 * f].fill(config.forget_bias);
                Tensor::from_parts(shape, b)
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::full(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            };
            params.insert(name, t);
        }
        Ok(ConvLstmNet { config, params })
    }

    pub fn from_params(config: ConvLstmConfig, params: Params) -> Result<Self> {
        check_params(&config.param_shapes()?, &params)?;
        Ok(ConvLstmNet { config, params })
    }

    pub(crate) fn forward_bound(
        &self,
        g: &mut Graph,
        clips: Var,
        p: &Bound,
        train: Option<&mut ChaCha8Rng>,
    ) -> Result<(ModelOutput, Vec<(String, BatchStats)>)> {
        let c = &self.config;
        let n = check_clips(g, clips, self.clip_shape())?;
        let t = c.clip_len;
        let (hidden, _) = c.spatial_extents()?;
        let mut x = g.reshape(clips, [n, t, c.frame_size, c.frame_size, c.in_channels])?;
        let mut stats = Vec::new();
        let mut activations = x;
        for (l, layer) in c.layers.iter().enumerate() {
            let cell = LstmCell {
                wx: param(p, &format!("lstm{l}.wx"))?,
                wh: param(p, &format!("lstm{l}.wh"))?,
                bias: param(p, &format!("lstm{l}.bias"))?,
                stride: layer.stride,
            };
            // Input-to-hidden convolutions for all timesteps at once.
            let xg = cell.input_gates(g, x)?;
            let mut state = ConvLstmState::zeros(g, n, hidden[l], layer.filters)?;
            let mut hs = Vec::with_capacity(t);
            for step in 0..t {
                let xt = g.slice(xg, 1, step, 1)?;
                state = cell.update(g, xt, &state)?;
                hs.push(state.h);
            }
            let seq = g.concat(&hs, 1)?;
            activations = seq;
            let gamma = param(p, &format!("bn{l}.gamma"))?;
            let beta = param(p, &format!("bn{l}.beta"))?;
            let normed = if train.is_some() {
                let (y, s) = g.batch_norm(seq, gamma, beta, c.bn_eps)?;
                stats.push((format!("bn{l}"), s));
                y
            } else {
                let mean = g.value(param(p, &format!("bn{l}.running_mean"))?).clone();
                let var = g.value(param(p, &format!("bn{l}.running_var"))?).clone();
                let (gm, bt) = (g.value(gamma).clone(), g.value(beta).clone());
                let scale: Vec<f32> =
                    gm.data().iter().zip(var.data()).map(|(&g, &v)| g / (v + c.bn_eps).sqrt()).collect();
                let shift: Vec<f32> =
                    bt.data().iter().zip(mean.data()).zip(&scale).map(|((&b, &m), &s)| b - m * s).collect();
                let scale = g.constant(Tensor::from_vec(scale))?;
                let shift = g.constant(Tensor::from_vec(shift))?;
                g.channel_affine(seq, scale, shift)?
            };
            x = g.maxpool(normed, [1, c.pool, c.pool])?;
        }
        let last = g.slice(x, 1, t - 1, 1)?;
        let feat_len = g.value(last).len() / n;
        let feat = g.reshape(last, [n, feat_len])?;
        let logits = g.matmul(feat, param(p, "fc.weight")?)?;
        let logits = g.add_bias(logits, param(p, "fc.bias")?)?;
        Ok((ModelOutput { logits, activations }, stats))
    }
}

impl VideoClassifier for ConvLstmNet {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn clip_shape(&self) -> [usize; 4] {
        let c = &self.config;
        [c.clip_len, c.frame_size, c.frame_size, c.in_channels]
    }

    fn forward(&self, g: &mut Graph, clips: Var) -> Result<ModelOutput> {
        let bound = bind(g, &self.params, |_| false)?;
        Ok(self.forward_bound(g, clips, &bound, None)?.0)
    }

    fn activation_frames(&self) -> Vec<Vec<usize>> {
        (0..self.config.clip_len).map(|t| vec![t]).collect()
    }
}
