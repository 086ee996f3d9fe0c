use super::kernels::{self, as_5d, ConvDims, PoolDims};
use super::{GradientStore, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Grads = Vec<Option<Vec<f32>>>;

impl Graph {
    /// Reverse pass from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<GradientStore> {
        let out_shape = self.shape(output);
        if self.value(output).len() != 1 {
            return Err(Error::NonScalar(out_shape.to_vec()));
        }
        let mut grads: Grads = (0..self.nodes.len()).map(|_| None).collect();
        if self.requires_grad(output) {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(GradientStore { grads })
    }

    /// Mutable gradient buffer for `v`, or `None` if `v` needs no gradient.
    fn slot<'a>(&self, grads: &'a mut Grads, v: Var) -> Option<&'a mut [f32]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]).as_mut_slice())
    }

    fn acc_map(&self, grads: &mut Grads, v: Var, g: &[f32], f: impl Fn(usize, f32) -> f32) {
        if let Some(dst) = self.slot(grads, v) {
            for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
                *d += f(i, gv);
            }
        }
    }

    fn propagate(&self, i: usize, g: &[f32], grads: &mut Grads) {
        let out = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| -gv);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                self.acc_map(grads, *a, g, |j, gv| gv * bv[j]);
                self.acc_map(grads, *b, g, |j, gv| gv * av[j]);
            }
            Op::Scale(x, c) => self.acc_map(grads, *x, g, |_, gv| gv * c),
            Op::Offset(x) | Op::Reshape(x) => self.acc_map(grads, *x, g, |_, gv| gv),
            Op::ScaleBy(x, s) => {
                let c = self.value(*s).item();
                self.acc_map(grads, *x, g, |_, gv| gv * c);
                let xv = self.data(*x);
                if let Some(ds) = self.slot(grads, *s) {
                    let dot: f64 = g.iter().zip(xv).map(|(&a, &b)| a as f64 * b as f64).sum();
                    ds[0] += dot as f32;
                }
            }
            Op::Sigmoid(x) => self.acc_map(grads, *x, g, |j, gv| gv * out[j] * (1.0 - out[j])),
            Op::Tanh(x) => self.acc_map(grads, *x, g, |j, gv| gv * (1.0 - out[j] * out[j])),
            Op::Relu(x) => {
                let xv = self.data(*x);
                self.acc_map(grads, *x, g, |j, gv| if xv[j] > 0.0 { gv } else { 0.0 });
            }
            Op::Abs(x) => {
                let xv = self.data(*x);
                self.acc_map(grads, *x, g, |j, gv| {
                    if xv[j] > 0.0 {
                        gv
                    } else if xv[j] < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
            }
            Op::Powf(x, p) => {
                let xv = self.data(*x);
                self.acc_map(grads, *x, g, |j, gv| if *p == 1.0 { gv } else { gv * p * xv[j].powf(p - 1.0) });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::Mean(x) => {
                let g0 = g[0] / self.value(*x).len().max(1) as f32;
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, ext, inner) = around(shape, *axis);
                let len = self.nodes[i].value.shape()[*axis];
                if let Some(dx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let dst = (o * ext + start) * inner;
                        let src = o * len * inner;
                        for (d, &gv) in dx[dst..dst + len * inner].iter_mut().zip(&g[src..src + len * inner]) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let out_shape = self.nodes[i].value.shape();
                let (outer, total, inner) = around(out_shape, *axis);
                let mut offset = 0;
                for &v in xs {
                    let ext = self.shape(v)[*axis];
                    if let Some(dx) = self.slot(grads, v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for (d, &gv) in
                                dx[o * ext * inner..(o + 1) * ext * inner].iter_mut().zip(&g[src..src + ext * inner])
                            {
                                *d += gv;
                            }
                        }
                    }
                    offset += ext;
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (&a, &gv) in argmax.iter().zip(g) {
                        dx[a as usize] += gv;
                    }
                }
            }
            Op::AvgPool { x, win } => {
                let d = PoolDims::new("avgpool", self.shape(*x), *win).expect("validated in forward");
                let k = d.window_len() as f32;
                if let Some(dx) = self.slot(grads, *x) {
                    d.for_each(|o, j| dx[j] += g[o] / k);
                }
            }
            Op::Conv3d { x, w, geom } => {
                let d =
                    ConvDims::new(self.shape(*x), self.shape(*w), geom.stride, geom.pad).expect("validated in forward");
                let (xv, wv) = (self.data(*x), self.data(*w));
                // Two disjoint slots: take them out of the store one at a time.
                let mut dx = self.nodes[x.0].requires_grad.then(|| take_or_zero(grads, *x, xv.len()));
                let mut dw = self.nodes[w.0].requires_grad.then(|| take_or_zero(grads, *w, wv.len()));
                kernels::conv3d_backward(&d, xv, wv, g, dx.as_deref_mut(), dw.as_deref_mut());
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                if let Some(dw) = dw {
                    grads[w.0] = Some(dw);
                }
            }
            Op::AddBias { x, b } => {
                self.acc_map(grads, *x, g, |_, gv| gv);
                let c = self.shape(*b)[0];
                if let Some(db) = self.slot(grads, *b) {
                    let mut acc = vec![0f64; c];
                    for (j, &gv) in g.iter().enumerate() {
                        acc[j % c] += gv as f64;
                    }
                    db.iter_mut().zip(acc).for_each(|(d, a)| *d += a as f32);
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(da) = self.slot(grads, *a) {
                    kernels::gemm(m, n, k, g, false, bv, true, da, 1.0);
                }
                if let Some(db) = self.slot(grads, *b) {
                    kernels::gemm(k, m, n, av, true, g, false, db, 1.0);
                }
            }
            Op::Softmax(x) => {
                let k = *self.shape(*x).last().unwrap();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((y, gr), d) in out.chunks_exact(k).zip(g.chunks_exact(k)).zip(dx.chunks_exact_mut(k)) {
                        let dot: f64 = y.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                        for j in 0..k {
                            d[j] += y[j] * (gr[j] - dot as f32);
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f32;
                if let Some(dx) = self.slot(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == l { 1.0 } else { 0.0 };
                            dx[r * k + j] += scale * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let mut sum_g = vec![0f64; c];
                let mut sum_gx = vec![0f64; c];
                for (j, (&gv, &h)) in g.iter().zip(xhat).enumerate() {
                    sum_g[j % c] += gv as f64;
                    sum_gx[j % c] += gv as f64 * h as f64;
                }
                if let Some(db) = self.slot(grads, *beta) {
                    db.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s as f32);
                }
                if let Some(dgm) = self.slot(grads, *gamma) {
                    dgm.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s as f32);
                }
                let gm = self.data(*gamma);
                let m = rows as f64;
                self.acc_map(grads, *x, g, |j, gv| {
                    let ch = j % c;
                    let v = gm[ch] as f64 * inv_std[ch] as f64 / m
                        * (m * gv as f64 - sum_g[ch] - xhat[j] as f64 * sum_gx[ch]);
                    v as f32
                });
            }
            Op::ChannelAffine { x, scale, shift } => {
                let c = self.shape(*scale)[0];
                let s = self.data(*scale);
                self.acc_map(grads, *x, g, |j, gv| gv * s[j % c]);
                let xv = self.data(*x);
                if let Some(ds) = self.slot(grads, *scale) {
                    let mut acc = vec![0f64; c];
                    for (j, (&gv, &v)) in g.iter().zip(xv).enumerate() {
                        acc[j % c] += gv as f64 * v as f64;
                    }
                    ds.iter_mut().zip(acc).for_each(|(d, a)| *d += a as f32);
                }
                if let Some(db) = self.slot(grads, *shift) {
                    let mut acc = vec![0f64; c];
                    for (j, &gv) in g.iter().enumerate() {
                        acc[j % c] += gv as f64;
                    }
                    db.iter_mut().zip(acc).for_each(|(d, a)| *d += a as f32);
                }
            }
            Op::Freeze { x, mask } => self.freeze_backward(*x, *mask, out, g, grads),
            Op::Dropout { x, keep } => self.acc_map(grads, *x, g, |j, gv| gv * keep[j]),
        }
    }

    /// With `G[t]` the total gradient reaching `out[t]`:
    /// `G[t] = g[t] + m[t+1] G[t+1]`, `dx[t] = (1 - m[t]) G[t]` (`dx[0] = G[0]`),
    /// `dm[t] = <G[t], out[t-1] - x[t]>`.
    fn freeze_backward(&self, x: Var, mask: Var, out: &[f32], g: &[f32], grads: &mut Grads) {
        let [n, t, h, w, c] = as_5d("freeze", self.shape(x)).expect("validated in forward");
        let frame = h * w * c;
        let (xv, m) = (self.data(x), self.data(mask));
        let mut total = g.to_vec();
        for s in 0..n {
            let base = s * t * frame;
            for i in (1..t).rev() {
                let (lo, hi) = total[base..base + t * frame].split_at_mut(i * frame);
                let prev = &mut lo[(i - 1) * frame..];
                for (p, &cur) in prev.iter_mut().zip(&hi[..frame]) {
                    *p += m[i] * cur;
                }
            }
        }
        if let Some(dm) = self.slot(grads, mask) {
            for s in 0..n {
                let base = s * t * frame;
                for i in 1..t {
                    let cur = base + i * frame;
                    let prev = cur - frame;
                    let dot: f64 =
                        (0..frame).map(|j| total[cur + j] as f64 * (out[prev + j] - xv[cur + j]) as f64).sum();
                    dm[i] += dot as f32;
                }
            }
        }
        self.acc_map(grads, x, &total, |j, gv| {
            let fi = (j / frame) % t;
            if fi == 0 {
                gv
            } else {
                (1.0 - m[fi]) * gv
            }
        });
    }
}

fn take_or_zero(grads: &mut Grads, v: Var, len: usize) -> Vec<f32> {
    grads[v.0].take().unwrap_or_else(|| vec![0.0; len])
}

fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
