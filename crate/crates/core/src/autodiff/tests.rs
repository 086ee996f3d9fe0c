use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{fd_check, finite_difference, rand_tensor, relative_error};

/// Direct-loop cross-correlation, independent of the im2col path.
fn conv3d_direct(x: &Tensor, k: &Tensor, stride: [usize; 3], pad: [usize; 3]) -> Tensor {
    let &[t, h, w, cin] = x.shape() else { panic!() };
    let &[kt, kh, kw, _, cout] = k.shape() else { panic!() };
    let o = [
        (t + 2 * pad[0] - kt) / stride[0] + 1,
        (h + 2 * pad[1] - kh) / stride[1] + 1,
        (w + 2 * pad[2] - kw) / stride[2] + 1,
    ];
    let mut out = vec![0f32; o[0] * o[1] * o[2] * cout];
    let xd = x.data();
    let kd = k.data();
    for a in 0..o[0] {
        for b in 0..o[1] {
            for c in 0..o[2] {
                for co in 0..cout {
                    let mut s = 0f64;
                    for i in 0..kt {
                        for j in 0..kh {
                            for l in 0..kw {
                                let it = (a * stride[0] + i) as isize - pad[0] as isize;
                                let ih = (b * stride[1] + j) as isize - pad[1] as isize;
                                let iw = (c * stride[2] + l) as isize - pad[2] as isize;
                                if it < 0
                                    || ih < 0
                                    || iw < 0
                                    || it >= t as isize
                                    || ih >= h as isize
                                    || iw >= w as isize
                                {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = xd[((it as usize * h + ih as usize) * w + iw as usize) * cin + ci];
                                    let kv = kd[(((i * kh + j) * kw + l) * cin + ci) * cout + co];
                                    s += xv as f64 * kv as f64;
                                }
                            }
                        }
                    }
                    out[((a * o[1] + b) * o[2] + c) * cout + co] = s as f32;
                }
            }
        }
    }
    Tensor::new(vec![o[0], o[1], o[2], cout], out).unwrap()
}

#[test]
fn identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[3, 4, 5, 1], -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let k = g.constant(Tensor::full(vec![1, 1, 1, 1, 1], 1.0)).unwrap();
    let y = g.conv3d(xv, k, [1, 1, 1], [0, 0, 0]).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn zero_kernel_gradient_is_input_upstream_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[3, 4, 4, 2], -1.0, 1.0);
    let up = rand_tensor(&mut rng, &[2, 3, 3, 1], -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let k = g.variable(Tensor::zeros(vec![2, 2, 2, 2, 1])).unwrap();
    let y = g.conv3d(xv, k, [1, 1, 1], [0, 0, 0]).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let u = g.constant(up.clone()).unwrap();
    let p = g.mul(y, u).unwrap();
    let s = g.sum(p).unwrap();
    let dk = g.backward(s).unwrap().get(k).unwrap().clone();
    // dK[a,b,c,ci] = sum over outputs of x[o + (a,b,c), ci] * up[o]
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                for ci in 0..2 {
                    let mut want = 0f64;
                    for ot in 0..2 {
                        for oh in 0..3 {
                            for ow in 0..3 {
                                let xi = (((ot + a) * 4 + oh + b) * 4 + ow + c) * 2 + ci;
                                want += x.data()[xi] as f64 * up.data()[(ot * 3 + oh) * 3 + ow] as f64;
                            }
                        }
                    }
                    let got = dk.data()[((a * 2 + b) * 2 + c) * 2 + ci];
                    assert!((got as f64 - want).abs() < 1e-5, "{got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[4, 6, 6, 1], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[2, 3, 3, 1, 2], -1.0, 1.0);
    let kk = k.clone();
    let err_x = fd_check(&x, 3, move |g, xv| {
        let kv = g.constant(kk.clone()).unwrap();
        g.conv3d(xv, kv, [1, 1, 1], [0, 0, 0]).unwrap()
    });
    let xx = x.clone();
    let err_k = fd_check(&k, 4, move |g, kv| {
        let xv = g.constant(xx.clone()).unwrap();
        g.conv3d(xv, kv, [1, 1, 1], [0, 0, 0]).unwrap()
    });
    assert!(err_x < 1e-3, "input gradient rel err {err_x}");
    assert!(err_k < 1e-3, "kernel gradient rel err {err_k}");
}

#[test]
fn impulse_response_reproduces_flipped_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = rand_tensor(&mut rng, &[2, 3, 3, 1, 1], -1.0, 1.0);
    let mut delta = vec![0.0; 5 * 5 * 5];
    delta[(2 * 5 + 2) * 5 + 2] = 1.0;
    let x = Tensor::new(vec![5, 5, 5, 1], delta).unwrap();
    let pad = [1, 2, 2];
    let mut g = Graph::new();
    let xv = g.constant(x.clone()).unwrap();
    let kv = g.constant(k.clone()).unwrap();
    let y = g.conv3d(xv, kv, [1, 1, 1], pad).unwrap();
    let direct = conv3d_direct(&x, &k, [1, 1, 1], pad);
    assert_eq!(g.value(y).shape(), direct.shape());
    assert_eq!(g.value(y).shape(), &[6, 7, 7, 1]);
    for (a, b) in g.value(y).data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    // Output at (2 + pad - i, ...) equals k[i, j, l]: the kernel appears flipped.
    let out = g.value(y).data();
    for i in 0..2 {
        for j in 0..3 {
            for l in 0..3 {
                let (ot, oh, ow) = (2 + 1 - i, 2 + 2 - j, 2 + 2 - l);
                assert_eq!(out[(ot * 7 + oh) * 7 + ow], k.data()[(i * 3 + j) * 3 + l]);
            }
        }
    }
}

#[test]
fn im2col_matches_direct_loops_with_stride_and_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..12 {
        let t = rng.gen_range(2..6);
        let h = rng.gen_range(3..8);
        let w = rng.gen_range(3..8);
        let cin = rng.gen_range(1..4);
        let cout = rng.gen_range(1..4);
        let k = [rng.gen_range(1..=t.min(3)), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let stride = [rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..3)];
        let pad = [rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..2)];
        let x = rand_tensor(&mut rng, &[t, h, w, cin], -1.0, 1.0);
        let kern = rand_tensor(&mut rng, &[k[0], k[1], k[2], cin, cout], -1.0, 1.0);
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let kv = g.constant(kern.clone()).unwrap();
        let y = g.conv3d(xv, kv, stride, pad).unwrap();
        let direct = conv3d_direct(&x, &kern, stride, pad);
        assert_eq!(g.shape(y), direct.shape(), "case {case}");
        for (a, b) in g.value(y).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-5, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn conv3d_shape_errors_are_descriptive() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![4, 4, 4, 2])).unwrap();
    let k = g.constant(Tensor::zeros(vec![3, 3, 3, 1, 4])).unwrap();
    let err = g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).unwrap_err().to_string();
    assert!(err.contains("conv3d") && err.contains("channels"), "{err}");
    let k = g.constant(Tensor::zeros(vec![5, 3, 3, 2, 4])).unwrap();
    assert!(g.conv3d(x, k, [1, 1, 1], [0, 0, 0]).is_err());
}

#[test]
fn softmax_of_zero_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![1, 4])).unwrap();
    let p = g.softmax(x).unwrap();
    assert_eq!(g.value(p).data(), &[0.25; 4]);
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(0.0)).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert_eq!(g.value(y).item(), 0.5);
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 0.25);
}

#[test]
fn maxpool_routes_gradient_to_argmax() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let y = g.maxpool(x, [1, 2, 2]).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
    let s = g.sum(y).unwrap();
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn maxpool_ties_go_to_first_element() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::full(vec![1, 2, 2, 1], 7.0)).unwrap();
    let y = g.maxpool(x, [1, 2, 2]).unwrap();
    let s = g.sum(y).unwrap();
    assert_eq!(g.backward(s).unwrap().get(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn linear_backward() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(3.0)).unwrap();
    let y = g.scale(x, 2.0).unwrap();
    assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 2.0);
}

#[test]
fn sum_of_sigmoid_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[8], -2.0, 2.0);
    // Oracle evaluates the function itself in f64, independent of the tape.
    let eval = |t: &Tensor| t.data().iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).sum::<f64>();
    let mut g = Graph::new();
    let v = g.variable(x.clone()).unwrap();
    let s = g.sigmoid(v).unwrap();
    let s = g.sum(s).unwrap();
    let analytic = g.backward(s).unwrap().get(v).unwrap().clone();
    let numeric = finite_difference(&x, 1e-3, eval);
    let err = relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn unreachable_tensors_have_no_gradient() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(1.0)).unwrap();
    let lonely = g.variable(Tensor::scalar(5.0)).unwrap();
    let c = g.constant(Tensor::scalar(2.0)).unwrap();
    let y = g.mul(x, c).unwrap();
    let grads = g.backward(y).unwrap();
    assert!(grads.contains(x));
    assert!(!grads.contains(lonely));
    assert!(!grads.contains(c));
}

#[test]
fn backward_rejects_non_scalar_output() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(vec![3])).unwrap();
    let y = g.sigmoid(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::NonScalar(_))));
}

#[test]
fn non_finite_inputs_are_rejected() {
    let mut g = Graph::new();
    assert!(matches!(g.variable(Tensor::from_vec(vec![1.0, f32::NAN])), Err(Error::NonFinite { .. })));
    let big = g.constant(Tensor::scalar(f32::MAX)).unwrap();
    let inf = g.scale(big, 10.0).unwrap();
    assert!(matches!(g.sigmoid(inf), Err(Error::NonFinite { .. })));
}

#[test]
fn repeated_backward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&mut rng, &[2, 4, 6, 6, 2], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[3, 3, 3, 2, 3], -0.5, 0.5);
    let mut g = Graph::new();
    let xv = g.variable(x).unwrap();
    let kv = g.variable(k).unwrap();
    let y = g.conv3d(xv, kv, [1, 2, 2], [1, 1, 1]).unwrap();
    let y = g.tanh(y).unwrap();
    let y = g.maxpool(y, [2, 1, 1]).unwrap();
    let s = g.mean(y).unwrap();
    let a = g.backward(s).unwrap();
    let b = g.backward(s).unwrap();
    for v in [xv, kv] {
        let bits = |t: &Tensor| t.data().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.get(v).unwrap()), bits(b.get(v).unwrap()));
    }
}

/// Every differentiable op against central differences over 20 seeds.
#[test]
fn every_op_matches_finite_differences() {
    for (name, err) in crate::gradcheck::op_gradient_errors(20) {
        assert!(err < 1e-3, "{name}: worst rel err {err}");
    }
}
