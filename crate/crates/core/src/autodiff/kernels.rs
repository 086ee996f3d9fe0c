//! Raw numeric kernels behind the tape ops: GEMM, im2col convolution, pooling.
//!
//! Everything here works on flat row-major slices. Video batches are viewed as
//! `[N, T, H, W, C]`; kernels as `[kt, kh, kw, Cin, Cout]`, which flattened is
//! exactly the `[K, Cout]` matrix the im2col product needs.

use crate::error::{Error, Result};

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// With `a_t` set, `a` is stored `k x m`; with `b_t` set, `b` is stored `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Views a rank-4 `[T, H, W, C]` or rank-5 `[N, T, H, W, C]` shape as 5-D.
pub(crate) fn as_5d(op: &'static str, shape: &[usize]) -> Result<[usize; 5]> {
    match *shape {
        [t, h, w, c] => Ok([1, t, h, w, c]),
        [n, t, h, w, c] => Ok([n, t, h, w, c]),
        _ => Err(Error::shape(op, format!("expected [T,H,W,C] or [N,T,H,W,C], got {shape:?}"))),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub inp: [usize; 3],
    pub cin: usize,
    pub k: [usize; 3],
    pub cout: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out: [usize; 3],
}

impl ConvDims {
    pub fn new(x_shape: &[usize], k_shape: &[usize], stride: [usize; 3], pad: [usize; 3]) -> Result<Self> {
        let [n, t, h, w, cin] = as_5d("conv3d", x_shape)?;
        let &[kt, kh, kw, kcin, cout] = k_shape else {
            return Err(Error::shape("conv3d", format!("kernel must be [kt,kh,kw,Cin,Cout], got {k_shape:?}")));
        };
        if kcin != cin {
            return Err(Error::shape(
                "conv3d",
                format!("input {x_shape:?} has {cin} channels, kernel {k_shape:?} expects {kcin}"),
            ));
        }
        if stride.contains(&0) {
            return Err(Error::shape("conv3d", format!("strides must be >= 1, got {stride:?}")));
        }
        let inp = [t, h, w];
        let k = [kt, kh, kw];
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = inp[a] + 2 * pad[a];
            if k[a] == 0 || k[a] > padded {
                return Err(Error::shape(
                    "conv3d",
                    format!(
                        "kernel {k:?} does not fit padded input {:?} (input {inp:?}, padding {pad:?})",
                        [t + 2 * pad[0], h + 2 * pad[1], w + 2 * pad[2]]
                    ),
                ));
            }
            out[a] = (padded - k[a]) / stride[a] + 1;
        }
        Ok(ConvDims { n, inp, cin, k, cout, stride, pad, out })
    }

    pub fn rows(&self) -> usize {
        self.out.iter().product()
    }

    pub fn patch(&self) -> usize {
        self.k.iter().product::<usize>() * self.cin
    }

    pub fn in_len(&self) -> usize {
        self.inp.iter().product::<usize>() * self.cin
    }

    pub fn out_len(&self) -> usize {
        self.rows() * self.cout
    }

    fn is_pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    /// Calls `f(row, patch_offset, input_offset)` for every in-bounds tap; each
    /// tap covers `cin` contiguous floats on both sides.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [t, h, w] = self.inp;
        let [kt, kh, kw] = self.k;
        let cin = self.cin;
        let mut row = 0;
        for ot in 0..self.out[0] {
            for oh in 0..self.out[1] {
                for ow in 0..self.out[2] {
                    let mut p = 0;
                    for a in 0..kt {
                        let it = (ot * self.stride[0] + a) as isize - self.pad[0] as isize;
                        for b in 0..kh {
                            let ih = (oh * self.stride[1] + b) as isize - self.pad[1] as isize;
                            for c in 0..kw {
                                let iw = (ow * self.stride[2] + c) as isize - self.pad[2] as isize;
                                if it >= 0
                                    && ih >= 0
                                    && iw >= 0
                                    && (it as usize) < t
                                    && (ih as usize) < h
                                    && (iw as usize) < w
                                {
                                    let src = ((it as usize * h + ih as usize) * w + iw as usize) * cin;
                                    f(row, p, src);
                                }
                                p += cin;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let patch = self.patch();
        let cin = self.cin;
        cols.fill(0.0);
        self.for_each_tap(|row, p, src| {
            let dst = row * patch + p;
            cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
        });
    }

    fn col2im_add(&self, cols: &[f32], dx: &mut [f32]) {
        let patch = self.patch();
        let cin = self.cin;
        self.for_each_tap(|row, p, src| {
            let s = row * patch + p;
            for (d, v) in dx[src..src + cin].iter_mut().zip(&cols[s..s + cin]) {
                *d += v;
            }
        });
    }
}

pub(crate) fn conv3d_forward(d: &ConvDims, x: &[f32], w: &[f32]) -> Vec<f32> {
    let (rows, patch) = (d.rows(), d.patch());
    let mut out = vec![0.0; d.n * d.out_len()];
    let mut cols = if d.is_pointwise() { Vec::new() } else { vec![0.0; rows * patch] };
    for s in 0..d.n {
        let xs = &x[s * d.in_len()..(s + 1) * d.in_len()];
        let a = if d.is_pointwise() {
            xs
        } else {
            d.im2col(xs, &mut cols);
            &cols
        };
        gemm(rows, patch, d.cout, a, false, w, false, &mut out[s * d.out_len()..(s + 1) * d.out_len()], 0.0);
    }
    out
}

/// Accumulates input and/or kernel gradients for upstream gradient `g`.
pub(crate) fn conv3d_backward(
    d: &ConvDims,
    x: &[f32],
    w: &[f32],
    g: &[f32],
    mut dx: Option<&mut [f32]>,
    mut dw: Option<&mut [f32]>,
) {
    let (rows, patch) = (d.rows(), d.patch());
    let mut cols = vec![0.0; rows * patch];
    for s in 0..d.n {
        let xs = &x[s * d.in_len()..(s + 1) * d.in_len()];
        let gs = &g[s * d.out_len()..(s + 1) * d.out_len()];
        if let Some(dw) = dw.as_deref_mut() {
            let a = if d.is_pointwise() {
                xs
            } else {
                d.im2col(xs, &mut cols);
                &cols
            };
            // dW[K, Cout] += cols^T [K, rows] * g [rows, Cout]
            gemm(patch, rows, d.cout, a, true, gs, false, dw, 1.0);
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxs = &mut dx[s * d.in_len()..(s + 1) * d.in_len()];
            if d.is_pointwise() {
                gemm(rows, d.cout, patch, gs, false, w, true, dxs, 1.0);
            } else {
                // dcols[rows, K] = g [rows, Cout] * W^T [Cout, K]
                gemm(rows, d.cout, patch, gs, false, w, true, &mut cols, 0.0);
                d.col2im_add(&cols, dxs);
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolDims {
    pub n: usize,
    pub inp: [usize; 3],
    pub c: usize,
    pub win: [usize; 3],
    pub out: [usize; 3],
}

impl PoolDims {
    pub fn new(op: &'static str, shape: &[usize], win: [usize; 3]) -> Result<Self> {
        let [n, t, h, w, c] = as_5d(op, shape)?;
        let inp = [t, h, w];
        let mut out = [0; 3];
        for a in 0..3 {
            if win[a] == 0 || win[a] > inp[a] {
                return Err(Error::shape(op, format!("window {win:?} exceeds extent {inp:?}")));
            }
            out[a] = inp[a] / win[a];
        }
        Ok(PoolDims { n, inp, c, win, out })
    }

    pub fn out_shape(&self, rank: usize) -> Vec<usize> {
        let mut s = vec![self.out[0], self.out[1], self.out[2], self.c];
        if rank == 5 {
            s.insert(0, self.n);
        }
        s
    }

    /// Calls `f(out_index, in_index)` for every window member, in row-major
    /// window order per output element.
    #[inline]
    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let [t, h, w] = self.inp;
        let [ot, oh, ow] = self.out;
        let c = self.c;
        let mut o = 0;
        for s in 0..self.n {
            for a in 0..ot {
                for b in 0..oh {
                    for e in 0..ow {
                        for ch in 0..c {
                            for i in 0..self.win[0] {
                                let it = a * self.win[0] + i;
                                for j in 0..self.win[1] {
                                    let ih = b * self.win[1] + j;
                                    for l in 0..self.win[2] {
                                        let iw = e * self.win[2] + l;
                                        f(o, (((s * t + it) * h + ih) * w + iw) * c + ch);
                                    }
                                }
                            }
                            o += 1;
                        }
                    }
                }
            }
        }
    }

    pub fn out_len(&self) -> usize {
        self.n * self.out.iter().product::<usize>() * self.c
    }

    pub fn window_len(&self) -> usize {
        self.win.iter().product()
    }
}
