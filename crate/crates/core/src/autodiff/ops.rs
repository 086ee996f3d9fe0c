use super::kernels::{self, as_5d, ConvDims, PoolDims};
use super::{ConvGeom, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel statistics of a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

/// `[outer, axis, inner]` factorisation of a shape around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    fn unary(&mut self, op_name: &'static str, x: Var, f: impl Fn(f32) -> f32, op: Op) -> Result<Var> {
        self.ensure_finite(op_name, x)?;
        let out = self.value(x).map(f);
        let rg = self.rg(&[x]);
        Ok(self.push(out, op, rg))
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var> {
        same_shape(self, op_name, a, b)?;
        self.ensure_finite(op_name, a)?;
        self.ensure_finite(op_name, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary("scale", x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f32) -> Result<Var> {
        self.unary("add_scalar", x, |v| v + c, Op::Offset(x))
    }

    /// `x * s` for a one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", format!("scale must hold one value, got {:?}", self.shape(s))));
        }
        self.ensure_finite("scale_by", s)?;
        let c = self.value(s).item();
        let rg = self.rg(&[x, s]);
        self.ensure_finite("scale_by", x)?;
        let out = self.value(x).map(|v| v * c);
        Ok(self.push(out, Op::ScaleBy(x, s), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, f32::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary("abs", x, f32::abs, Op::Abs(x))
    }

    /// Elementwise `x^p`; intended for non-negative `x`.
    pub fn powf(&mut self, x: Var, p: f32) -> Result<Var> {
        self.unary("powf", x, |v| v.powf(p), Op::Powf(x, p))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.ensure_finite("sum", x)?;
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s as f32), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.ensure_finite("mean", x)?;
        let n = self.value(x).len().max(1);
        let s: f64 = self.data(x).iter().map(|&v| v as f64).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar((s / n as f64) as f32), Op::Mean(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len)));
        }
        let (outer, ext, inner) = around(&shape, axis);
        let src = self.data(x);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::Slice { x, axis, start }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let ext = self.shape(v)[axis];
                let d = self.data(v);
                data.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(xs);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// Non-overlapping max pooling over `(t, h, w)` windows of a
    /// `[T,H,W,C]` or `[N,T,H,W,C]` tensor. Ties go to the first element in
    /// row-major window order.
    pub fn maxpool(&mut self, x: Var, window: [usize; 3]) -> Result<Var> {
        self.ensure_finite("maxpool", x)?;
        let d = PoolDims::new("maxpool", self.shape(x), window)?;
        let src = self.data(x);
        let mut out = vec![f32::NEG_INFINITY; d.out_len()];
        let mut argmax = vec![u32::MAX; d.out_len()];
        d.for_each(|o, i| {
            if argmax[o] == u32::MAX || src[i] > out[o] {
                out[o] = src[i];
                argmax[o] = i as u32;
            }
        });
        let shape = d.out_shape(self.shape(x).len());
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }, rg))
    }

    pub fn avgpool(&mut self, x: Var, window: [usize; 3]) -> Result<Var> {
        self.ensure_finite("avgpool", x)?;
        let d = PoolDims::new("avgpool", self.shape(x), window)?;
        let src = self.data(x);
        let mut acc = vec![0f64; d.out_len()];
        d.for_each(|o, i| acc[o] += src[i] as f64);
        let k = d.window_len() as f64;
        let out = acc.into_iter().map(|v| (v / k) as f32).collect();
        let shape = d.out_shape(self.shape(x).len());
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AvgPool { x, win: window }, rg))
    }

    /// 3-D cross-correlation (no kernel flip) of `[T,H,W,Cin]` or
    /// `[N,T,H,W,Cin]` input with a `[kt,kh,kw,Cin,Cout]` kernel.
    pub fn conv3d(&mut self, x: Var, w: Var, stride: [usize; 3], padding: [usize; 3]) -> Result<Var> {
        let d = ConvDims::new(self.shape(x), self.shape(w), stride, padding)?;
        let out = kernels::conv3d_forward(&d, self.data(x), self.data(w));
        let mut shape = vec![d.out[0], d.out[1], d.out[2], d.cout];
        if self.shape(x).len() == 5 {
            shape.insert(0, d.n);
        }
        let rg = self.rg(&[x, w]);
        let geom = ConvGeom { stride, pad: padding };
        Ok(self.push(Tensor::from_parts(shape, out), Op::Conv3d { x, w, geom }, rg))
    }

    /// Adds a per-channel bias along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&1);
        if self.shape(b) != [c] {
            return Err(Error::shape("add_bias", format!("bias {:?} for input {:?}", self.shape(b), self.shape(x))));
        }
        let bias = self.data(b);
        let data = self.data(x).iter().enumerate().map(|(i, &v)| v + bias[i % c]).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias { x, b }, rg))
    }

    /// `[M,K] x [K,N]` matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", self.shape(a), self.shape(b))));
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(a), false, self.data(b), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.ensure_finite("softmax", x)?;
        let k = *self.shape(x).last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let data = softmax_rows(self.data(x), k);
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `[N, K]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.ensure_finite("softmax_cross_entropy", logits)?;
        let &[n, k] = self.shape(logits) else {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits must be [N,K], got {:?}", self.shape(logits)),
            ));
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels in 0..{k} for {n} rows", labels.len()),
            ));
        }
        let probs = softmax_rows(self.data(logits), k);
        let loss: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs[i * k + l].max(f32::MIN_POSITIVE) as f64).ln())
            .sum::<f64>()
            / n as f64;
        let rg = self.rg(&[logits]);
        let op = Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss as f32), op, rg))
    }

    /// Training-mode batch normalisation over every axis but the last.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<(Var, BatchStats)> {
        self.ensure_finite("batch_norm", x)?;
        let c = *self.shape(x).last().unwrap_or(&1);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("batch_norm", format!("affine params must be [{c}]")));
        }
        let xs = self.data(x);
        let rows = xs.len() / c;
        let mut mean = vec![0f64; c];
        for (i, &v) in xs.iter().enumerate() {
            mean[i % c] += v as f64;
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0f64; c];
        for (i, &v) in xs.iter().enumerate() {
            let d = v as f64 - mean[i % c];
            var[i % c] += d * d;
        }
        var.iter_mut().for_each(|v| *v /= rows as f64);
        let inv_std: Vec<f32> = var.iter().map(|&v| (1.0 / (v + eps as f64).sqrt()) as f32).collect();
        let xhat: Vec<f32> =
            xs.iter().enumerate().map(|(i, &v)| ((v as f64 - mean[i % c]) * inv_std[i % c] as f64) as f32).collect();
        let (gm, bt) = (self.data(gamma), self.data(beta));
        let out: Vec<f32> = xhat.iter().enumerate().map(|(i, &h)| gm[i % c] * h + bt[i % c]).collect();
        let stats =
            BatchStats { mean: mean.iter().map(|&m| m as f32).collect(), var: var.iter().map(|&v| v as f32).collect() };
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std }, rg);
        Ok((v, stats))
    }

    /// `x * scale[c] + shift[c]` along the last axis (evaluation-mode batch norm).
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap_or(&1);
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::shape("channel_affine", format!("params must be [{c}]")));
        }
        let (s, b) = (self.data(scale), self.data(shift));
        let data = self.data(x).iter().enumerate().map(|(i, &v)| v * s[i % c] + b[i % c]).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x, scale, shift]);
        Ok(self.push(out, Op::ChannelAffine { x, scale, shift }, rg))
    }

    /// Freeze perturbation along the frame axis (axis 0 of `[T,H,W,C]`, axis 1
    /// of `[N,T,H,W,C]`): `out[0] = x[0]`, `out[t] = (1 - m[t]) x[t] + m[t] out[t-1]`.
    pub fn freeze(&mut self, x: Var, mask: Var) -> Result<Var> {
        let [n, t, h, w, c] = as_5d("freeze", self.shape(x))?;
        if self.shape(mask) != [t] {
            return Err(Error::shape("freeze", format!("mask {:?} for {t} frames", self.shape(mask))));
        }
        self.ensure_finite("freeze", x)?;
        self.ensure_finite("freeze", mask)?;
        let frame = h * w * c;
        let (xs, m) = (self.data(x), self.data(mask));
        let mut out = xs.to_vec();
        for s in 0..n {
            let clip = &mut out[s * t * frame..(s + 1) * t * frame];
            for i in 1..t {
                let (prev, cur) = clip.split_at_mut(i * frame);
                let prev = &prev[(i - 1) * frame..];
                for (o, &p) in cur[..frame].iter_mut().zip(prev) {
                    *o = (1.0 - m[i]) * *o + m[i] * p;
                }
            }
        }
        let out = Tensor::from_parts(self.shape(x).to_vec(), out);
        let rg = self.rg(&[x, mask]);
        Ok(self.push(out, Op::Freeze { x, mask }, rg))
    }

    /// Inverted dropout with a precomputed keep mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, keep: Vec<f32>) -> Result<Var> {
        if keep.len() != self.value(x).len() {
            return Err(Error::shape("dropout", "keep mask length"));
        }
        let data = self.data(x).iter().zip(&keep).map(|(&v, &k)| v * k).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Dropout { x, keep }, rg))
    }
}

pub(crate) fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_rows(x: &[f32], k: usize) -> Vec<f32> {
    let mut out = vec![0.0; x.len()];
    for (row, dst) in x.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let denom: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (((v - max) as f64).exp() / denom) as f32;
        }
    }
    out
}
