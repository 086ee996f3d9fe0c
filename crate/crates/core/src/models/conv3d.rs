use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    bind, check_clips, check_params, param, proportional_frames, uniform_init, Bound, ModelOutput, Params,
    VideoClassifier,
};
use crate::autodiff::{BatchStats, Graph, Var};
use crate::data::{CLIP_LEN, FRAME_SIZE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3dLayer {
    pub channels: usize,
    /// `(t, h, w)` extents.
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv3dNetConfig {
    pub clip_len: usize,
    pub frame_size: usize,
    pub in_channels: usize,
    pub layers: Vec<Conv3dLayer>,
    /// The head average-pools the last block over time and onto a
    /// `head_grid x head_grid` spatial grid before the linear classifier.
    pub head_grid: usize,
    pub num_classes: usize,
    pub dropout: f32,
}

impl Default for Conv3dNetConfig {
    fn default() -> Self {
        let layer = |channels, stride| Conv3dLayer { channels, kernel: [3, 3, 3], stride, padding: [1, 1, 1] };
        Conv3dNetConfig {
            clip_len: CLIP_LEN,
            frame_size: FRAME_SIZE,
            in_channels: 1,
            // One temporal stride of 2 in total: T/2 activation steps.
            layers: vec![layer(8, [1, 2, 2]), layer(16, [1, 2, 2]), layer(16, [2, 1, 1])],
            head_grid: 2,
            num_classes: 8,
            dropout: 0.5,
        }
    }
}

impl Conv3dNetConfig {
    /// `[T, H, W, C]` after every conv block.
    pub fn block_shapes(&self) -> Result<Vec<[usize; 4]>> {
        let mut cur = [self.clip_len, self.frame_size, self.frame_size, self.in_channels];
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let mut next = [0, 0, 0, l.channels];
            for a in 0..3 {
                let padded = cur[a] + 2 * l.padding[a];
                if l.stride[a] == 0 || l.kernel[a] == 0 || l.kernel[a] > padded {
                    return Err(Error::invalid(format!("conv{i}: kernel {:?} does not fit input {cur:?}", l.kernel)));
                }
                next[a] = (padded - l.kernel[a]) / l.stride[a] + 1;
            }
            out.push(next);
            cur = next;
        }
        Ok(out)
    }

    fn validate(&self) -> Result<[usize; 4]> {
        if self.layers.is_empty() || self.num_classes < 2 || self.head_grid == 0 {
            return Err(Error::invalid("conv3d net needs layers, >= 2 classes and a head grid"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let last = *self.block_shapes()?.last().unwrap();
        if last[1] % self.head_grid != 0 || last[2] % self.head_grid != 0 {
            return Err(Error::invalid(format!("head grid {} does not divide {last:?}", self.head_grid)));
        }
        Ok(last)
    }

    fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let last = self.validate()?;
        let mut cin = self.in_channels;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let [kt, kh, kw] = l.kernel;
            out.push((format!("conv{i}.weight"), vec![kt, kh, kw, cin, l.channels]));
            out.push((format!("conv{i}.bias"), vec![l.channels]));
            cin = l.channels;
        }
        let feat = self.head_grid * self.head_grid * last[3];
        out.push(("fc.weight".into(), vec![feat, self.num_classes]));
        out.push(("fc.bias".into(), vec![self.num_classes]));
        Ok(out)
    }
}

/// Small 3D CNN: conv-ReLU blocks, temporal/spatial average pool, linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3dNet {
    pub config: Conv3dNetConfig,
    pub params: Params,
}

impl Conv3dNet {
    /// He-uniform conv weights, Glorot-uniform head, zero biases.
    pub fn init(config: Conv3dNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = Params::new();
        for (name, shape) in config.param_shapes()? {
            let t = if name.ends_with(".bias") {
                crate::Tensor::zeros(shape)
            } else if name == "fc.weight" {
                let bound = (6.0 / (shape[0] + shape[1]) as f32).sqrt();
                uniform_init(rng, shape, bound)
            } else {
                let fan_in: usize = shape[..4].iter().product();
                uniform_init(rng, shape, (6.0 / fan_in as f32).sqrt())
            };
            params.insert(name, t);
        }
        Ok(Conv3dNet { config, params })
    }

    pub fn from_params(config: Conv3dNetConfig, params: Params) -> Result<Self> {
        check_params(&config.param_shapes()?, &params)?;
        Ok(Conv3dNet { config, params })
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
        let mut x = g.reshape(clips, [n, c.clip_len, c.frame_size, c.frame_size, c.in_channels])?;
        for (i, l) in c.layers.iter().enumerate() {
            x = g.conv3d(x, param(p, &format!("conv{i}.weight"))?, l.stride, l.padding)?;
            x = g.add_bias(x, param(p, &format!("conv{i}.bias"))?)?;
            x = g.relu(x)?;
        }
        let activations = x;
        let [t, h, w, ch] = g.shape(x)[1..] else { unreachable!() };
        let grid = c.head_grid;
        let pooled = g.avgpool(x, [t, h / grid, w / grid])?;
        let mut feat = g.reshape(pooled, [n, grid * grid * ch])?;
        if let Some(rng) = train {
            if c.dropout > 0.0 {
                let scale = 1.0 / (1.0 - c.dropout);
                let keep =
                    (0..n * grid * grid * ch).map(|_| if rng.gen::<f32>() < c.dropout { 0.0 } else { scale }).collect();
                feat = g.dropout(feat, keep)?;
            }
        }
        let logits = g.matmul(feat, param(p, "fc.weight")?)?;
        let logits = g.add_bias(logits, param(p, "fc.bias")?)?;
        Ok((ModelOutput { logits, activations }, Vec::new()))
    }
}

impl VideoClassifier for Conv3dNet {
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
        let t_out = self.config.block_shapes().map(|s| s.last().unwrap()[0]).unwrap_or(1);
        proportional_frames(self.config.clip_len, t_out)
    }
}
