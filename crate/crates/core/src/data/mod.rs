//! Procedural motion-defined video clips.
//!
//! Every class is defined by how objects move, never by how they look. The
//! direction-paired classes (`move_left`/`move_right`, `move_up`/`move_down`,
//! `approach`/`retreat`) share one canonical generator: the second class of
//! each pair is the first one played backwards, frame for frame, so a reversed
//! clip is a valid clip of its mirror class. `collide` and `pass_each_other`
//! carry an [`EventWindow`] marking the contact or crossing frames.

mod render;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use render::{object_coverage, render_raw};

/// Default number of frames a clip is sub-sampled to.
pub const CLIP_LEN: usize = 16;
/// Default spatial extent (square frames).
pub const FRAME_SIZE: usize = 32;
/// Background noise amplitude.
pub const NOISE_AMPLITUDE: f32 = 0.05;
/// Raw clip lengths drawn when sampling specs.
pub const RAW_LENGTHS: [usize; 3] = [32, 48, 64];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    MoveLeft,
    MoveRight,
    MoveUp,
    MoveDown,
    Approach,
    Retreat,
    Collide,
    PassEachOther,
}

impl MotionClass {
    pub const ALL: [MotionClass; 8] = [
        MotionClass::MoveLeft,
        MotionClass::MoveRight,
        MotionClass::MoveUp,
        MotionClass::MoveDown,
        MotionClass::Approach,
        MotionClass::Retreat,
        MotionClass::Collide,
        MotionClass::PassEachOther,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::MoveLeft => "move_left",
            MotionClass::MoveRight => "move_right",
            MotionClass::MoveUp => "move_up",
            MotionClass::MoveDown => "move_down",
            MotionClass::Approach => "approach",
            MotionClass::Retreat => "retreat",
            MotionClass::Collide => "collide",
            MotionClass::PassEachOther => "pass_each_other",
        }
    }

    /// The class a time-reversed clip belongs to, for direction-paired classes.
    pub fn mirror(self) -> Option<MotionClass> {
        use MotionClass::*;
        match self {
            MoveLeft => Some(MoveRight),
            MoveRight => Some(MoveLeft),
            MoveUp => Some(MoveDown),
            MoveDown => Some(MoveUp),
            Approach => Some(Retreat),
            Retreat => Some(Approach),
            Collide | PassEachOther => None,
        }
    }

    pub fn has_event(self) -> bool {
        matches!(self, MotionClass::Collide | MotionClass::PassEachOther)
    }

    /// Classes played backwards from a canonical trajectory.
    fn is_reversed_form(self) -> bool {
        matches!(self, MotionClass::MoveLeft | MotionClass::MoveUp | MotionClass::Retreat)
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MotionClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown class {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpriteShape {
    Square,
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sprite {
    pub shape: SpriteShape,
    /// Side length (square) or diameter (disc) in pixels.
    pub size: f32,
    pub intensity: f32,
}

/// Piecewise-linear path: `(fraction of the clip in [0, 1], x, y)` keyframes,
/// positions being the sprite's top-left corner in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub keys: Vec<(f32, f32, f32)>,
}

impl Path {
    pub fn linear(from: (f32, f32), to: (f32, f32)) -> Self {
        Path { keys: vec![(0.0, from.0, from.1), (1.0, to.0, to.1)] }
    }

    pub fn at(&self, u: f32) -> (f32, f32) {
        let keys = &self.keys;
        if u <= keys[0].0 {
            return (keys[0].1, keys[0].2);
        }
        for w in keys.windows(2) {
            let (a, b) = (w[0], w[1]);
            if u <= b.0 {
                let s = if b.0 > a.0 { (u - a.0) / (b.0 - a.0) } else { 1.0 };
                return (a.1 + (b.1 - a.1) * s, a.2 + (b.2 - a.2) * s);
            }
        }
        let last = keys[keys.len() - 1];
        (last.1, last.2)
    }
}

/// Full description of one clip; the seed fixes every pixel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub class: MotionClass,
    pub raw_len: usize,
    pub size: usize,
    pub sprites: Vec<Sprite>,
    pub paths: Vec<Path>,
    /// Raw frames (canonical time) of the planted event, inclusive.
    pub event: Option<(usize, usize)>,
    pub noise: f32,
    pub seed: u64,
    /// Render the canonical trajectory (and its noise) backwards in time.
    pub time_reversed: bool,
}

/// Inclusive frame range of a planted event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventWindow {
    pub start: usize,
    pub end: usize,
}

impl EventWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("event window [{start}, {end}] is empty")));
        }
        Ok(EventWindow { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        (self.start..=self.end).contains(&frame)
    }

    /// Maps a raw-frame window to the sub-sampled clip: the sampled positions
    /// whose source frame lies inside the window (nearest one if none does).
    pub fn subsampled(&self, raw_len: usize, target: usize) -> EventWindow {
        let idx = subsample_indices(raw_len, target);
        let inside: Vec<usize> = (0..target).filter(|&i| self.contains(idx[i])).collect();
        match (inside.first(), inside.last()) {
            (Some(&a), Some(&b)) => EventWindow { start: a, end: b },
            _ => {
                let centre = (self.start + self.end) as f64 / 2.0;
                let best = (0..target)
                    .min_by(|&a, &b| {
                        let da = (idx[a] as f64 - centre).abs();
                        let db = (idx[b] as f64 - centre).abs();
                        da.total_cmp(&db)
                    })
                    .unwrap_or(0);
                EventWindow { start: best, end: best }
            }
        }
    }
}

impl ClipSpec {
    /// Draws a random spec of `class` from `seed`.
    pub fn sample(class: MotionClass, seed: u64) -> ClipSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c11f);
        let raw_len = *RAW_LENGTHS.choose(&mut rng).unwrap();
        Self::sample_with(class, seed, raw_len, FRAME_SIZE, &mut rng)
    }

    /// A `collide` spec whose contact is centred on raw frame `contact`.
    pub fn collide_at(seed: u64, raw_len: usize, contact: usize) -> Result<ClipSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc011_1de);
        let hold = (raw_len / CLIP_LEN).max(1);
        if contact < hold + 4 || contact + hold + 2 >= raw_len {
            return Err(Error::invalid(format!(
                "contact frame {contact} too close to the ends of a {raw_len}-frame clip"
            )));
        }
        let sprites = vec![random_sprite(&mut rng, 5.0, 7.0), random_sprite(&mut rng, 5.0, 7.0)];
        Ok(collide_spec(seed, raw_len, FRAME_SIZE, contact, sprites, &mut rng))
    }

    fn sample_with(class: MotionClass, seed: u64, raw_len: usize, size: usize, rng: &mut ChaCha8Rng) -> ClipSpec {
        use MotionClass::*;
        let s = size as f32;
        let a = random_sprite(rng, 5.0, 8.0);
        let mut spec = match class {
            MoveLeft | MoveRight | MoveUp | MoveDown => {
                let dist = rng.gen_range(12.0..18.0);
                let start = rng.gen_range(1.0..(s - a.size - dist - 1.0));
                let across = rng.gen_range(1.0..(s - a.size - 1.0));
                let path = if matches!(class, MoveLeft | MoveRight) {
                    Path::linear((start, across), (start + dist, across))
                } else {
                    Path::linear((across, start), (across, start + dist))
                };
                ClipSpec::base(class, seed, raw_len, size, vec![a], vec![path])
            }
            Approach | Retreat => {
                let a = random_sprite(rng, 5.0, 7.0);
                let b = random_sprite(rng, 5.0, 7.0);
                let y = rng.gen_range(1.0..(s - a.size.max(b.size) - 1.0));
                let room = s - 2.0 - a.size - b.size;
                let far = rng.gen_range(0.6..0.85) * room;
                let near = rng.gen_range(2.5..4.0);
                let centre = rng.gen_range((1.0 + far / 2.0 + a.size)..(s - 1.0 - far / 2.0 - b.size));
                let (ax0, ax1) = (centre - far / 2.0 - a.size, centre - near / 2.0 - a.size);
                let (bx0, bx1) = (centre + far / 2.0, centre + near / 2.0);
                let paths = vec![Path::linear((ax0, y), (ax1, y)), Path::linear((bx0, y), (bx1, y))];
                ClipSpec::base(class, seed, raw_len, size, vec![a, b], paths)
            }
            Collide => {
                let frac = rng.gen_range(0.4..0.65);
                let contact = (frac * raw_len as f32).round() as usize;
                let b = random_sprite(rng, 5.0, 7.0);
                collide_spec(seed, raw_len, size, contact, vec![random_sprite(rng, 5.0, 7.0), b], rng)
            }
            PassEachOther => {
                let b = random_sprite(rng, 5.0, 8.0);
                let gap = rng.gen_range(2.0..5.0);
                let top = rng.gen_range(1.0..(s - a.size - b.size - gap - 1.0));
                let bottom = top + a.size + gap;
                let left = rng.gen_range(1.0..4.0);
                let right = s - 1.0 - rng.gen_range(0.0..3.0);
                let cross = rng.gen_range(0.4..0.6);
                // Meet in the middle at fraction `cross` of the clip.
                let mid = (left + right) / 2.0;
                let pa =
                    Path { keys: vec![(0.0, left, top), (cross, mid - a.size / 2.0, top), (1.0, right - a.size, top)] };
                let pb = Path {
                    keys: vec![(0.0, right - b.size, bottom), (cross, mid - b.size / 2.0, bottom), (1.0, left, bottom)],
                };
                let mut spec = ClipSpec::base(class, seed, raw_len, size, vec![a, b], vec![pa, pb]);
                spec.event = crossing_frames(&spec);
                spec
            }
        };
        spec.time_reversed = class.is_reversed_form();
        spec
    }

    fn base(
        class: MotionClass,
        seed: u64,
        raw_len: usize,
        size: usize,
        sprites: Vec<Sprite>,
        paths: Vec<Path>,
    ) -> Self {
        ClipSpec {
            class,
            raw_len,
            size,
            sprites,
            paths,
            event: None,
            noise: NOISE_AMPLITUDE,
            seed,
            time_reversed: false,
        }
    }

    /// Spec for the mirror class that renders this clip backwards, pixel for pixel.
    pub fn mirrored(&self) -> Option<ClipSpec> {
        let class = self.class.mirror()?;
        Some(ClipSpec { class, time_reversed: !self.time_reversed, ..self.clone() })
    }

    /// Canonical-time frame rendered at output position `f`.
    pub(crate) fn canonical_frame(&self, f: usize) -> usize {
        if self.time_reversed {
            self.raw_len - 1 - f
        } else {
            f
        }
    }

    pub(crate) fn position(&self, object: usize, canonical: usize) -> (f32, f32) {
        let u = if self.raw_len > 1 { canonical as f32 / (self.raw_len - 1) as f32 } else { 0.0 };
        self.paths[object].at(u)
    }

    /// Event window in raw (output-order) frames.
    pub fn raw_event(&self) -> Option<EventWindow> {
        let (a, b) = self.event?;
        let (a, b) = if self.time_reversed { (self.raw_len - 1 - b, self.raw_len - 1 - a) } else { (a, b) };
        Some(EventWindow { start: a, end: b })
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_len == 0 || self.size == 0 {
            return Err(Error::invalid("clip must have at least one frame and pixel"));
        }
        if self.sprites.len() != self.paths.len() {
            return Err(Error::invalid("one path per sprite"));
        }
        let s = self.size as f32;
        for (sp, path) in self.sprites.iter().zip(&self.paths) {
            if sp.size <= 0.0 || sp.size > s {
                return Err(Error::invalid(format!(
                    "sprite of size {} does not fit a {}-pixel frame",
                    sp.size, self.size
                )));
            }
            if path.keys.is_empty() {
                return Err(Error::invalid("empty path"));
            }
            for &(_, x, y) in &path.keys {
                if x < 0.0 || y < 0.0 || x + sp.size > s || y + sp.size > s {
                    return Err(Error::invalid(format!("trajectory leaves the frame at ({x:.2}, {y:.2})")));
                }
            }
        }
        if let Some((a, b)) = self.event {
            if a > b || b >= self.raw_len {
                return Err(Error::invalid(format!("event [{a}, {b}] outside {} raw frames", self.raw_len)));
            }
        }
        Ok(())
    }
}

fn random_sprite(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> Sprite {
    Sprite {
        shape: if rng.gen_bool(0.5) { SpriteShape::Square } else { SpriteShape::Disc },
        size: rng.gen_range(lo..hi),
        intensity: rng.gen_range(0.7..1.0),
    }
}

/// Two sprites close in, hold contact (slightly overlapping) for
/// `raw_len / 16` frames either side of `contact`, then bounce apart at half speed.
fn collide_spec(
    seed: u64,
    raw_len: usize,
    size: usize,
    contact: usize,
    sprites: Vec<Sprite>,
    rng: &mut ChaCha8Rng,
) -> ClipSpec {
    let s = size as f32;
    let (a, b) = (sprites[0], sprites[1]);
    let hold = (raw_len / CLIP_LEN).max(1);
    let (c0, c1) = (contact - hold, contact + hold);
    let last = (raw_len - 1) as f32;
    let y = rng.gen_range(1.0..(s - a.size.max(b.size) - 1.0));
    let centre = rng.gen_range(s * 0.45..s * 0.55);
    // In contact the sprites overlap by `overlap`; one frame either side they
    // sit `lead` further apart each, a 1.5 px gap that shares no pixel.
    let (overlap, lead) = (1.0, 1.25);
    let touch_a = centre - a.size + overlap / 2.0;
    let touch_b = centre - overlap / 2.0;
    let span_in = (c0 - 1) as f32;
    let far = (centre - a.size - 1.0).min(s - (centre + b.size) - 1.0).max(2.0);
    let speed = ((far - lead) / span_in).max(0.05);
    let start_a = touch_a - lead - speed * span_in;
    let start_b = touch_b + lead + speed * span_in;
    let out_frames = (raw_len - 1 - c1) as f32;
    let retreat = (speed * 0.5 * out_frames).min(far - lead);
    let k = |f: usize| f as f32 / last;
    let pa = Path {
        keys: vec![
            (0.0, start_a, y),
            (k(c0 - 1), touch_a - lead, y),
            (k(c0), touch_a, y),
            (k(c1), touch_a, y),
            (k(c1 + 1), touch_a - lead, y),
            (1.0, touch_a - lead - retreat, y),
        ],
    };
    let pb = Path {
        keys: vec![
            (0.0, start_b, y),
            (k(c0 - 1), touch_b + lead, y),
            (k(c0), touch_b, y),
            (k(c1), touch_b, y),
            (k(c1 + 1), touch_b + lead, y),
            (1.0, touch_b + lead + retreat, y),
        ],
    };
    let mut spec = ClipSpec::base(MotionClass::Collide, seed, raw_len, size, sprites, vec![pa, pb]);
    spec.event = Some((c0, c1));
    spec
}

/// Raw frames where the two sprites' horizontal extents overlap.
fn crossing_frames(spec: &ClipSpec) -> Option<(usize, usize)> {
    let (sa, sb) = (spec.sprites[0].size, spec.sprites[1].size);
    let frames: Vec<usize> = (0..spec.raw_len)
        .filter(|&f| {
            let (xa, _) = spec.position(0, f);
            let (xb, _) = spec.position(1, f);
            xa < xb + sb && xb < xa + sa
        })
        .collect();
    Some((*frames.first()?, *frames.last()?))
}

/// Renders a spec: the raw clip `[raw_len, H, W, 1]` and its event window in raw frames.
pub fn generate_clip(spec: &ClipSpec) -> Result<(Tensor, Option<EventWindow>)> {
    spec.validate()?;
    Ok((render_raw(spec), spec.raw_event()))
}

/// Evenly spaced frame indices `floor(i * raw / target)`.
pub fn subsample_indices(raw_len: usize, target: usize) -> Vec<usize> {
    (0..target).map(|i| i * raw_len / target).collect()
}

/// Selects `target` evenly spaced frames of a `[T, ...]` clip, starting at frame 0.
pub fn subsample(clip: &Tensor, target: usize) -> Result<Tensor> {
    let (raw, inner) = clip.outer_inner();
    if clip.rank() == 0 || target == 0 || raw < target {
        return Err(Error::invalid(format!("cannot sub-sample {raw} frames to {target}")));
    }
    let mut data = Vec::with_capacity(target * inner);
    for i in subsample_indices(raw, target) {
        data.extend_from_slice(&clip.data()[i * inner..(i + 1) * inner]);
    }
    let mut shape = clip.shape().to_vec();
    shape[0] = target;
    Tensor::new(shape, data)
}

/// One rendered, sub-sampled clip with its metadata.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub spec: ClipSpec,
    pub label: usize,
    pub clip: Tensor,
    pub event: Option<EventWindow>,
}

impl Sample {
    pub fn render(id: impl Into<String>, spec: ClipSpec, classes: &[MotionClass], frames: usize) -> Result<Sample> {
        let label = classes
            .iter()
            .position(|&c| c == spec.class)
            .ok_or_else(|| Error::invalid(format!("class {} not in the class list", spec.class)))?;
        let (raw, event) = generate_clip(&spec)?;
        let clip = subsample(&raw, frames)?;
        let event = event.map(|e| e.subsampled(spec.raw_len, frames));
        Ok(Sample { id: id.into(), spec, label, clip, event })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: Vec<MotionClass>,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Builds a class-stratified train/val split; clip seeds derive from `seed`.
pub fn make_dataset(classes: &[MotionClass], per_class: usize, split: f64, seed: u64) -> Result<Dataset> {
    if classes.len() < 2 {
        return Err(Error::invalid("a dataset needs at least two classes"));
    }
    if per_class < 2 {
        return Err(Error::invalid(format!("need at least 2 clips per class, got {per_class}")));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::invalid(format!("split ratio {split} must lie in (0, 1)")));
    }
    let n_train = ((per_class as f64 * split).round() as usize).clamp(1, per_class - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (ci, &class) in classes.iter().enumerate() {
        let mut order: Vec<usize> = (0..per_class).collect();
        order.shuffle(&mut rng);
        for (rank, &i) in order.iter().enumerate() {
            let clip_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((ci as u64) << 32 | i as u64);
            let id = format!("{}_{:03}", class.name(), i);
            let sample = Sample::render(id, ClipSpec::sample(class, clip_seed), classes, CLIP_LEN)?;
            if rank < n_train {
                train.push(sample);
            } else {
                val.push(sample);
            }
        }
    }
    Ok(Dataset { classes: classes.to_vec(), train, val })
}

/// Reverses the frame order of a `[T, ...]` clip.
pub fn reverse_frames(clip: &Tensor) -> Tensor {
    let (t, inner) = clip.outer_inner();
    let mut data = Vec::with_capacity(clip.len());
    for i in (0..t).rev() {
        data.extend_from_slice(&clip.data()[i * inner..(i + 1) * inner]);
    }
    Tensor::from_parts(clip.shape().to_vec(), data)
}

#[cfg(test)]
mod tests;
