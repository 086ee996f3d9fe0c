//! Grad-CAM for video: one class-specific map per activation timestep.
//!
//! For target activations `A[t, i, j, k]` and the class logit `F`,
//! `w[t, k]` is the spatial mean of `dF/dA[t, :, :, k]` and the map is
//! `L[t, i, j] = max(0, sum_k w[t, k] * A[t, i, j, k])`.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::models::VideoClassifier;
use crate::tensor::Tensor;

/// Non-negative saliency maps `[T', H, W]` plus the input frames each covers.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyVolume {
    pub class: usize,
    pub maps: Tensor,
    pub frame_index_map: Vec<Vec<usize>>,
}

impl SaliencyVolume {
    pub fn steps(&self) -> usize {
        self.maps.shape()[0]
    }

    /// `(height, width)` of each map.
    pub fn extent(&self) -> (usize, usize) {
        (self.maps.shape()[1], self.maps.shape()[2])
    }

    pub fn map(&self, t: usize) -> &[f32] {
        let (h, w) = self.extent();
        &self.maps.data()[t * h * w..(t + 1) * h * w]
    }

    pub fn max(&self) -> f32 {
        self.maps.data().iter().copied().fold(0.0, f32::max)
    }

    /// Number of input frames covered.
    pub fn input_frames(&self) -> usize {
        self.frame_index_map.iter().map(Vec::len).sum()
    }

    /// One map per input frame, taken from the timestep that covers it.
    pub fn per_frame(&self) -> Vec<&[f32]> {
        let mut out = vec![&[][..]; self.input_frames()];
        for (t, frames) in self.frame_index_map.iter().enumerate() {
            for &f in frames {
                out[f] = self.map(t);
            }
        }
        out
    }
}

/// Grad-CAM on raw tensors: `acts` and `grads` are `[T, H, W, K]`, the result `[T, H, W]`.
pub fn gradcam_from(acts: &Tensor, grads: &Tensor) -> Result<Tensor> {
    if acts.rank() != 4 || acts.shape() != grads.shape() {
        return Err(Error::shape("gradcam", format!("activations {:?}, gradients {:?}", acts.shape(), grads.shape())));
    }
    let [t, h, w, k] = [acts.shape()[0], acts.shape()[1], acts.shape()[2], acts.shape()[3]];
    let (a, g) = (acts.data(), grads.data());
    let mut out = vec![0f32; t * h * w];
    for ti in 0..t {
        let base = ti * h * w;
        let mut weights = vec![0f64; k];
        for p in 0..h * w {
            for (kk, wk) in weights.iter_mut().enumerate() {
                *wk += g[(base + p) * k + kk] as f64;
            }
        }
        for wk in &mut weights {
            *wk /= (h * w) as f64;
        }
        for p in 0..h * w {
            let s: f64 = weights.iter().enumerate().map(|(kk, wk)| wk * a[(base + p) * k + kk] as f64).sum();
            out[base + p] = s.max(0.0) as f32;
        }
    }
    Tensor::new(vec![t, h, w], out)
}

/// Grad-CAM of `class` on a single `[T, H, W, C]` clip, at activation
/// resolution. The class score is the pre-softmax logit.
pub fn gradcam(model: &dyn VideoClassifier, clip: &Tensor, class: usize) -> Result<SaliencyVolume> {
    if class >= model.num_classes() {
        return Err(Error::invalid(format!("class {class} out of range for {} classes", model.num_classes())));
    }
    if clip.rank() != 4 {
        return Err(Error::shape("gradcam", format!("expected one [T, H, W, C] clip, got {:?}", clip.shape())));
    }
    let mut g = Graph::new();
    // A variable input makes every activation downstream of it receive a gradient.
    let x = g.variable(clip.clone())?;
    let out = model.forward(&mut g, x)?;
    let logit = g.slice(out.logits, 1, class, 1)?;
    let logit = g.sum(logit)?;
    let grads = g.backward(logit)?;
    let shape = g.shape(out.activations)[1..].to_vec();
    let acts = g.value(out.activations).reshape(shape.clone())?;
    let dacts = grads.get_or_zeros(out.activations, g.shape(out.activations)).reshape(shape)?;
    Ok(SaliencyVolume { class, maps: gradcam_from(&acts, &dacts)?, frame_index_map: model.activation_frames() })
}

/// Bilinear resize of every map to `height x width` with half-pixel centres
/// and edge clamping.
pub fn upsample(volume: &SaliencyVolume, height: usize, width: usize) -> Result<SaliencyVolume> {
    let (h, w) = volume.extent();
    if height < h || width < w {
        return Err(Error::invalid(format!("upsample target {height}x{width} smaller than {h}x{w}")));
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        (0..dst)
            .map(|d| {
                let s = ((d as f32 + 0.5) * src as f32 / dst as f32 - 0.5).clamp(0.0, (src - 1) as f32);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, s - lo as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(height, h), axis(width, w));
    let mut out = Vec::with_capacity(volume.steps() * height * width);
    for t in 0..volume.steps() {
        let m = volume.map(t);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = m[y0 * w + x0] * (1.0 - fx) + m[y0 * w + x1] * fx;
                let bottom = m[y1 * w + x0] * (1.0 - fx) + m[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(SaliencyVolume {
        class: volume.class,
        maps: Tensor::new(vec![volume.steps(), height, width], out)?,
        frame_index_map: volume.frame_index_map.clone(),
    })
}

/// Grad-CAM upsampled to the clip's frame size.
pub fn gradcam_at_input(model: &dyn VideoClassifier, clip: &Tensor, class: usize) -> Result<SaliencyVolume> {
    let vol = gradcam(model, clip, class)?;
    upsample(&vol, clip.shape()[1], clip.shape()[2])
}

/// 8-bit levels of `map / scale`, clamped to [0, 1].
fn levels(map: &[f32], scale: f32) -> Vec<u8> {
    let inv = if scale > 0.0 { 1.0 / scale } else { 0.0 };
    map.iter().map(|&v| ((v * inv).clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes one binary PGM per input frame (`saliency_000.pgm`, ...) and one
/// overlay PNG (`overlay_000.png`, ...) blending the grayscale frame with the
/// map in red. Maps are normalised by the volume's global maximum. The
/// volume must already be at the clip's resolution. Returns the written paths.
pub fn export_volume(volume: &SaliencyVolume, clip: &Tensor, dir: &Path) -> Result<Vec<PathBuf>> {
    let (h, w) = volume.extent();
    if clip.rank() != 4 || clip.shape()[1] != h || clip.shape()[2] != w || clip.shape()[0] != volume.input_frames() {
        return Err(Error::shape("export", format!("volume {:?} vs clip {:?}", volume.maps.shape(), clip.shape())));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scale = volume.max();
    let c = clip.shape()[3];
    let mut written = Vec::new();
    for (f, map) in volume.per_frame().into_iter().enumerate() {
        let lv = levels(map, scale);
        let pgm = dir.join(format!("saliency_{f:03}.pgm"));
        GrayImage::from_raw(w as u32, h as u32, lv.clone())
            .expect("buffer matches extent")
            .save_with_format(&pgm, image::ImageFormat::Pnm)?;
        written.push(pgm);

        let frame = &clip.index_outer(f);
        let mut overlay = RgbImage::new(w as u32, h as u32);
        for (p, px) in overlay.pixels_mut().enumerate() {
            let gray = frame.data()[p * c..(p + 1) * c].iter().sum::<f32>() / c as f32;
            let gray = gray.clamp(0.0, 1.0) * 255.0;
            let alpha = lv[p] as f32 / 255.0 * 0.6;
            let mix = |target: f32| ((1.0 - alpha) * gray + alpha * target).round() as u8;
            *px = Rgb([mix(255.0), mix(0.0), mix(0.0)]);
        }
        let png = dir.join(format!("overlay_{f:03}.png"));
        overlay.save_with_format(&png, image::ImageFormat::Png)?;
        written.push(png);
    }
    Ok(written)
}

/// Reads back a PGM written by [`export_volume`] as levels in [0, 1].
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.pixels().map(|&Luma([v])| v as f32 / 255.0).collect()))
}
