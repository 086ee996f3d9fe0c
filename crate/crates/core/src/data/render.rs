use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClipSpec, Sprite, SpriteShape};
use crate::tensor::Tensor;

const DISC_SUBSAMPLES: usize = 8;

/// Anti-aliased coverage in `[0, 1]` of a sprite with top-left corner `(x, y)`
/// on a `size x size` grid. Squares use exact area, discs 8x8 super-sampling.
pub fn object_coverage(sprite: &Sprite, x: f32, y: f32, size: usize) -> Vec<f32> {
    let mut cov = vec![0.0; size * size];
    let s = sprite.size;
    let (r0, r1) = (y.floor().max(0.0) as usize, ((y + s).ceil() as usize).min(size));
    let (c0, c1) = (x.floor().max(0.0) as usize, ((x + s).ceil() as usize).min(size));
    match sprite.shape {
        SpriteShape::Square => {
            let overlap = |lo: f32, p: usize| ((p as f32 + 1.0).min(lo + s) - (p as f32).max(lo)).max(0.0);
            for r in r0..r1 {
                let fy = overlap(y, r);
                for c in c0..c1 {
                    cov[r * size + c] = fy * overlap(x, c);
                }
            }
        }
        SpriteShape::Disc => {
            let rad = s / 2.0;
            let (cx, cy) = (x + rad, y + rad);
            let step = 1.0 / DISC_SUBSAMPLES as f32;
            for r in r0..r1 {
                for c in c0..c1 {
                    let mut hits = 0;
                    for i in 0..DISC_SUBSAMPLES {
                        let py = r as f32 + (i as f32 + 0.5) * step;
                        for j in 0..DISC_SUBSAMPLES {
                            let px = c as f32 + (j as f32 + 0.5) * step;
                            if (px - cx).powi(2) + (py - cy).powi(2) <= rad * rad {
                                hits += 1;
                            }
                        }
                    }
                    cov[r * size + c] = hits as f32 / (DISC_SUBSAMPLES * DISC_SUBSAMPLES) as f32;
                }
            }
        }
    }
    cov
}

/// Renders every raw frame of `spec` as a `[raw_len, size, size, 1]` tensor.
///
/// Background noise for a frame is seeded by `(seed, canonical frame)`, so a
/// time-reversed spec reproduces its mirror's pixels exactly.
pub fn render_raw(spec: &ClipSpec) -> Tensor {
    let n = spec.size;
    let mut data = Vec::with_capacity(spec.raw_len * n * n);
    for f in 0..spec.raw_len {
        let canonical = spec.canonical_frame(f);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(canonical as u64 + 1);
        let mut frame: Vec<f32> = (0..n * n).map(|_| spec.noise * rng.gen::<f32>()).collect();
        for (o, sprite) in spec.sprites.iter().enumerate() {
            let (x, y) = spec.position(o, canonical);
            let cov = object_coverage(sprite, x, y, n);
            for (p, &a) in frame.iter_mut().zip(&cov) {
                if a > 0.0 {
                    *p = *p * (1.0 - a) + sprite.intensity * a;
                }
            }
        }
        data.extend(frame);
    }
    Tensor::from_parts(vec![spec.raw_len, n, n, 1], data)
}
