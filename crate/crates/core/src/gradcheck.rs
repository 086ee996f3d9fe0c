//! Central finite differences, for checking analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

/// Numerical gradient of `f` at `x` by central differences with step `eps`.
pub fn finite_difference(x: &Tensor, eps: f32, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let base = x.to_vec();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        let (hi, lo) = (base[i] + eps, base[i] - eps);
        probe[i] = hi;
        let up = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = lo;
        let down = f(&Tensor::from_parts(x.shape().to_vec(), probe.clone()));
        probe[i] = base[i];
        // The representable step, not the nominal one.
        grad.push(((up - down) / (hi as f64 - lo as f64)) as f32);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// `||a - b|| / max(||a||, ||b||)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative_error on mismatched shapes");
    let (mut diff, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        diff += (x as f64 - y as f64).powi(2);
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    let denom = na.sqrt().max(nb.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>()).unwrap()
}

/// Values kept at least `gap` away from zero, for ops with a kink at 0.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let v: f32 = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Runs `build` on a variable `x`, reduces with fixed random weights, and
/// compares the analytic gradient with central differences at `eps = 1e-3`.
pub fn fd_check(x: &Tensor, seed: u64, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    fd_check_eps(x, 1e-3, seed, build)
}

/// [`fd_check`] with a chosen step. Deep f32 pipelines accumulate rounding
/// noise of order `1e-7 / eps` in the differences, so they need a larger step.
pub fn fd_check_eps(x: &Tensor, eps: f32, seed: u64, build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let (analytic, numeric) = weighted_gradients(x, eps, seed, &build);
    relative_error(&analytic, &numeric)
}

fn weighted_gradients(x: &Tensor, eps: f32, seed: u64, build: &dyn Fn(&mut Graph, Var) -> Var) -> (Tensor, Tensor) {
    let weights = {
        let mut g = Graph::new();
        let xv = g.constant(x.clone()).unwrap();
        let y = build(&mut g, xv);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        rand_tensor(&mut rng, g.shape(y), -1.0, 1.0)
    };
    let eval = |input: &Tensor, want_grad: bool| {
        let mut g = Graph::new();
        let xv = if want_grad { g.variable(input.clone()) } else { g.constant(input.clone()) }.unwrap();
        let y = build(&mut g, xv);
        // The reduction is evaluated in f64 so the probe differences are not
        // swamped by rounding of one large f32 sum.
        let value = g.value(y).data().iter().zip(weights.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let grad = want_grad.then(|| {
            let r = g.constant(weights.clone()).unwrap();
            let p = g.mul(y, r).unwrap();
            let s = g.sum(p).unwrap();
            g.backward(s).unwrap().get_or_zeros(xv, input.shape())
        });
        (value, grad)
    };
    let analytic = eval(x, true).1.unwrap();
    (analytic, finite_difference(x, eps, |p| eval(p, false).0))
}

/// Worst relative error per op over `seeds` random draws.
pub fn op_gradient_errors(seeds: u64) -> Vec<(&'static str, f64)> {
    type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng, u64) -> f64>);
    let cases: Vec<Case> = vec![
        (
            "add",
            Box::new(|rng, s| {
                let b = rand_tensor(rng, &[3, 4], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[3, 4], -1.0, 1.0), s, move |g, x| {
                    let bv = g.variable(b.clone()).unwrap();
                    g.add(x, bv).unwrap()
                })
            }),
        ),
        (
            "sub",
            Box::new(|rng, s| {
                let b = rand_tensor(rng, &[5], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[5], -1.0, 1.0), s, move |g, x| {
                    let bv = g.constant(b.clone()).unwrap();
                    g.sub(bv, x).unwrap()
                })
            }),
        ),
        (
            "mul",
            Box::new(|rng, s| {
                let b = rand_tensor(rng, &[2, 3], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[2, 3], -1.0, 1.0), s, move |g, x| {
                    let bv = g.constant(b.clone()).unwrap();
                    let y = g.mul(x, bv).unwrap();
                    g.mul(y, x).unwrap()
                })
            }),
        ),
        (
            "scale/add_scalar",
            Box::new(|rng, s| {
                fd_check(&rand_tensor(rng, &[6], -1.0, 1.0), s, |g, x| {
                    let y = g.scale(x, -1.7).unwrap();
                    g.add_scalar(y, 0.3).unwrap()
                })
            }),
        ),
        (
            "scale_by",
            Box::new(|rng, s| {
                let base = rand_tensor(rng, &[4, 3], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[1], -1.0, 1.0), s, move |g, sc| {
                    let b = g.constant(base.clone()).unwrap();
                    let y = g.scale_by(b, sc).unwrap();
                    g.scale_by(y, sc).unwrap()
                })
            }),
        ),
        ("sigmoid", Box::new(|rng, s| fd_check(&rand_tensor(rng, &[10], -3.0, 3.0), s, |g, x| g.sigmoid(x).unwrap()))),
        ("tanh", Box::new(|rng, s| fd_check(&rand_tensor(rng, &[10], -2.0, 2.0), s, |g, x| g.tanh(x).unwrap()))),
        ("relu", Box::new(|rng, s| fd_check(&rand_away_from_zero(rng, &[10], 0.01), s, |g, x| g.relu(x).unwrap()))),
        ("abs", Box::new(|rng, s| fd_check(&rand_away_from_zero(rng, &[10], 0.01), s, |g, x| g.abs(x).unwrap()))),
        ("powf", Box::new(|rng, s| fd_check(&rand_tensor(rng, &[8], 0.1, 1.5), s, |g, x| g.powf(x, 3.0).unwrap()))),
        ("sum", Box::new(|rng, s| fd_check(&rand_tensor(rng, &[3, 3], -1.0, 1.0), s, |g, x| g.sum(x).unwrap()))),
        ("mean", Box::new(|rng, s| fd_check(&rand_tensor(rng, &[3, 3], -1.0, 1.0), s, |g, x| g.mean(x).unwrap()))),
        (
            "reshape/slice/concat",
            Box::new(|rng, s| {
                fd_check(&rand_tensor(rng, &[2, 5, 3], -1.0, 1.0), s, |g, x| {
                    let a = g.slice(x, 1, 1, 3).unwrap();
                    let b = g.slice(x, 1, 0, 2).unwrap();
                    let c = g.concat(&[a, b, a], 1).unwrap();
                    g.reshape(c, vec![8, 3, 2]).unwrap()
                })
            }),
        ),
        (
            "maxpool",
            Box::new(|rng, s| {
                // Distinct, well-separated values so the argmax is stable under the probe.
                let n = 2 * 4 * 4 * 4 * 2;
                let mut vals: Vec<f32> = (0..n).map(|i| i as f32 * 0.01).collect();
                for i in (1..n).rev() {
                    vals.swap(i, rng.gen_range(0..=i));
                }
                let x = Tensor::new(vec![2, 4, 4, 4, 2], vals).unwrap();
                fd_check(&x, s, |g, x| g.maxpool(x, [2, 2, 1]).unwrap())
            }),
        ),
        (
            "avgpool",
            Box::new(|rng, s| {
                fd_check(&rand_tensor(rng, &[4, 4, 6, 2], -1.0, 1.0), s, |g, x| g.avgpool(x, [2, 2, 3]).unwrap())
            }),
        ),
        (
            "conv3d input",
            Box::new(|rng, s| {
                let k = rand_tensor(rng, &[2, 3, 3, 2, 3], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[1, 4, 6, 6, 2], -1.0, 1.0), s, move |g, x| {
                    let kv = g.constant(k.clone()).unwrap();
                    g.conv3d(x, kv, [1, 2, 2], [1, 1, 1]).unwrap()
                })
            }),
        ),
        (
            "conv3d kernel",
            Box::new(|rng, s| {
                let x = rand_tensor(rng, &[2, 4, 6, 6, 2], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[2, 3, 3, 2, 3], -1.0, 1.0), s, move |g, k| {
                    let xv = g.constant(x.clone()).unwrap();
                    g.conv3d(xv, k, [2, 1, 2], [0, 1, 1]).unwrap()
                })
            }),
        ),
        (
            "add_bias",
            Box::new(|rng, s| {
                let x = rand_tensor(rng, &[3, 2, 4], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[4], -1.0, 1.0), s, move |g, b| {
                    let xv = g.variable(x.clone()).unwrap();
                    let y = g.add_bias(xv, b).unwrap();
                    g.mul(y, y).unwrap()
                })
            }),
        ),
        (
            "matmul",
            Box::new(|rng, s| {
                let b = rand_tensor(rng, &[4, 3], -1.0, 1.0);
                let lhs = fd_check(&rand_tensor(rng, &[2, 4], -1.0, 1.0), s, {
                    let b = b.clone();
                    move |g, a| {
                        let bv = g.constant(b.clone()).unwrap();
                        g.matmul(a, bv).unwrap()
                    }
                });
                let a = rand_tensor(rng, &[2, 4], -1.0, 1.0);
                let rhs = fd_check(&b, s, move |g, bv| {
                    let av = g.constant(a.clone()).unwrap();
                    g.matmul(av, bv).unwrap()
                });
                lhs.max(rhs)
            }),
        ),
        (
            "softmax",
            Box::new(|rng, s| fd_check(&rand_tensor(rng, &[3, 5], -2.0, 2.0), s, |g, x| g.softmax(x).unwrap())),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|rng, s| {
                let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
                fd_check(&rand_tensor(rng, &[4, 5], -2.0, 2.0), s, move |g, x| {
                    g.softmax_cross_entropy(x, &labels).unwrap()
                })
            }),
        ),
        (
            "batch_norm",
            Box::new(|rng, s| {
                let gamma = rand_tensor(rng, &[3], 0.5, 1.5);
                let beta = rand_tensor(rng, &[3], -0.5, 0.5);
                fd_check(&rand_tensor(rng, &[4, 5, 3], -1.0, 1.0), s, move |g, x| {
                    let gm = g.variable(gamma.clone()).unwrap();
                    let bt = g.variable(beta.clone()).unwrap();
                    g.batch_norm(x, gm, bt, 1e-5).unwrap().0
                })
            }),
        ),
        (
            "batch_norm gamma",
            Box::new(|rng, s| {
                let x = rand_tensor(rng, &[6, 3], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[3], 0.5, 1.5), s, move |g, gm| {
                    let xv = g.constant(x.clone()).unwrap();
                    let bt = g.constant(Tensor::zeros(vec![3])).unwrap();
                    g.batch_norm(xv, gm, bt, 1e-5).unwrap().0
                })
            }),
        ),
        (
            "channel_affine",
            Box::new(|rng, s| {
                let scale = rand_tensor(rng, &[2], -1.0, 1.0);
                let shift = rand_tensor(rng, &[2], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[3, 2], -1.0, 1.0), s, move |g, x| {
                    let sc = g.variable(scale.clone()).unwrap();
                    let sh = g.variable(shift.clone()).unwrap();
                    let y = g.channel_affine(x, sc, sh).unwrap();
                    g.mul(y, x).unwrap()
                })
            }),
        ),
        (
            "freeze clip",
            Box::new(|rng, s| {
                let m = rand_tensor(rng, &[5], 0.0, 1.0);
                fd_check(&rand_tensor(rng, &[5, 3, 3, 1], -1.0, 1.0), s, move |g, x| {
                    let mv = g.constant(m.clone()).unwrap();
                    g.freeze(x, mv).unwrap()
                })
            }),
        ),
        (
            "freeze mask",
            Box::new(|rng, s| {
                let x = rand_tensor(rng, &[2, 6, 3, 2, 1], -1.0, 1.0);
                fd_check(&rand_tensor(rng, &[6], 0.0, 1.0), s, move |g, m| {
                    let xv = g.constant(x.clone()).unwrap();
                    g.freeze(xv, m).unwrap()
                })
            }),
        ),
        (
            "dropout",
            Box::new(|rng, s| {
                let keep: Vec<f32> = (0..6).map(|_| if rng.gen_bool(0.5) { 2.0 } else { 0.0 }).collect();
                fd_check(&rand_tensor(rng, &[6], -1.0, 1.0), s, move |g, x| g.dropout(x, keep.clone()).unwrap())
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, case)| {
            let worst = (0..seeds)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                    case(&mut rng, seed)
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Worst relative error over `seeds` draws of the gradient with respect to
/// the input clip of both networks, and of the mask loss with respect to
/// the pre-sigmoid mask.
pub fn model_gradient_errors(seeds: u64) -> Vec<(&'static str, f64)> {
    use crate::mask::{loss_and_grad, mask_loss, MaskOptConfig};
    use crate::models::{
        Conv3dLayer, Conv3dNet, Conv3dNetConfig, ConvLstmConfig, ConvLstmLayer, ConvLstmNet, VideoClassifier,
    };

    let layer = |channels, stride| Conv3dLayer { channels, kernel: [3, 3, 3], stride, padding: [1, 1, 1] };
    let conv3d_cfg = Conv3dNetConfig {
        clip_len: 4,
        frame_size: 8,
        in_channels: 1,
        layers: vec![layer(3, [1, 2, 2]), layer(4, [2, 1, 1])],
        head_grid: 2,
        num_classes: 3,
        dropout: 0.0,
    };
    let lstm_cfg = |clip_len, layers: Vec<ConvLstmLayer>, pool| ConvLstmConfig {
        clip_len,
        frame_size: 8,
        in_channels: 1,
        layers,
        pool,
        num_classes: 3,
        ..Default::default()
    };
    let (mut worst_3d, mut worst_lstm, mut worst_mask) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        // Non-negative weights, positive biases and a non-negative clip keep
        // every ReLU on one side, so the net is affine and a wide step only
        // shrinks rounding noise.
        let mut net = Conv3dNet::init(conv3d_cfg.clone(), &mut rng).unwrap();
        for (name, t) in net.params.iter_mut() {
            if name.starts_with("conv") {
                let data: Vec<f32> = if name.ends_with("bias") {
                    vec![0.1; t.len()]
                } else {
                    t.data().iter().map(|v| v.abs()).collect()
                };
                *t = Tensor::new(t.shape().to_vec(), data).unwrap();
            }
        }
        let clip = rand_tensor(&mut rng, &[4, 8, 8, 1], 0.0, 1.0);
        worst_3d = worst_3d.max(fd_check_eps(&clip, 1e-1, seed, |g, x| net.forward(g, x).unwrap().logits));

        let layers = vec![
            ConvLstmLayer { filters: 3, kernel: 3, stride: 2 },
            ConvLstmLayer { filters: 2, kernel: 3, stride: 1 },
        ];
        let mut lstm = ConvLstmNet::init(lstm_cfg(4, layers, 1), &mut rng).unwrap();
        for (name, t) in lstm.params.iter_mut() {
            if name.ends_with("running_var") {
                *t = rand_tensor(&mut rng, t.shape(), 0.5, 1.5);
            }
        }
        let clip = rand_tensor(&mut rng, &[4, 8, 8, 1], 0.0, 1.0);
        worst_lstm = worst_lstm.max(fd_check_eps(&clip, 1e-2, seed, |g, x| lstm.forward(g, x).unwrap().logits));

        // The mask loss goes through a smooth ConvLSTM for the same reason.
        let layers = vec![ConvLstmLayer { filters: 3, kernel: 3, stride: 2 }];
        let net = ConvLstmNet::init(lstm_cfg(6, layers, 2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40 + seed);
        let clip = rand_tensor(&mut rng, &[6, 8, 8, 1], 0.0, 1.0);
        let pre = rand_tensor(&mut rng, &[6], -2.0, 2.0);
        let cfg = MaskOptConfig { lambda1: 0.05, lambda2: 0.1, ..Default::default() };
        let (_, grad) = loss_and_grad(pre.data(), &clip, &net, 1, &cfg).unwrap();
        let fd = finite_difference(&pre, 1e-2, |p| {
            let mut g = Graph::new();
            let pv = g.constant(p.clone()).unwrap();
            let x = g.constant(clip.clone()).unwrap();
            let m = g.sigmoid(pv).unwrap();
            let l = mask_loss(&mut g, m, x, &net, 1, &cfg).unwrap();
            g.value(l).item() as f64
        });
        worst_mask = worst_mask.max(relative_error(&Tensor::from_vec(grad), &fd));
    }
    vec![("conv3d input", worst_3d), ("convlstm input", worst_lstm), ("mask loss", worst_mask)]
}
