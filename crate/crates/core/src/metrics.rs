//! Comparison statistics: blobs in Grad-CAM maps, mask lengths, score drops,
//! histograms and Welch's t-test.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::gradcam::SaliencyVolume;

/// A pixel counts as salient above this fraction of its volume's maximum.
pub const BLOB_THRESHOLD: f32 = 0.4;
pub const BLOB_MIN_AREA: usize = 4;
/// Records with `OS - RS` or `OS - FS` at or below this are excluded.
pub const DROP_EPSILON: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub threshold: f32,
    pub min_area: usize,
}

impl Default for BlobParams {
    fn default() -> Self {
        BlobParams { threshold: BLOB_THRESHOLD, min_area: BLOB_MIN_AREA }
    }
}

/// An 8-connected patch of salient pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    /// `(x, y)`
    pub centroid: (f64, f64),
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Euclidean distance from the centroid to `((w - 1) / 2, (h - 1) / 2)`.
    pub fn center_distance(&self, height: usize, width: usize) -> f64 {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        ((self.centroid.0 - cx).powi(2) + (self.centroid.1 - cy).powi(2)).sqrt()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Components of `{map > threshold}` with at least `min_area` pixels, largest
/// first (ties in scan order). `map` is `height x width`, row-major.
pub fn detect_blobs(map: &[f32], height: usize, width: usize, threshold: f32, min_area: usize) -> Vec<Blob> {
    assert_eq!(map.len(), height * width, "map does not match its extent");
    let on: Vec<bool> = map.iter().map(|&v| v > threshold).collect();
    // Two-pass labelling with union-find over the already-scanned neighbours.
    let mut parent: Vec<usize> = (0..map.len()).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !on[i] {
                continue;
            }
            let mut neighbours = Vec::with_capacity(4);
            if x > 0 {
                neighbours.push(i - 1);
            }
            if y > 0 {
                neighbours.push(i - width);
                if x > 0 {
                    neighbours.push(i - width - 1);
                }
                if x + 1 < width {
                    neighbours.push(i - width + 1);
                }
            }
            for n in neighbours.into_iter().filter(|&n| on[n]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, n));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in (0..map.len()).filter(|&i| on[i]) {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut blobs: Vec<Blob> = groups
        .into_values()
        .filter(|p| p.len() >= min_area)
        .map(|pixels| {
            let n = pixels.len() as f64;
            let sx: f64 = pixels.iter().map(|&i| (i % width) as f64).sum();
            let sy: f64 = pixels.iter().map(|&i| (i / width) as f64).sum();
            Blob { centroid: (sx / n, sy / n), pixels }
        })
        .collect();
    blobs.sort_by_key(|b| std::cmp::Reverse(b.area()));
    blobs
}

/// Count, mean and sample standard deviation; the moments are absent for
/// an empty sample, the deviation for fewer than two values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { n, mean: None, std: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Stat { n, mean: Some(mean), std }
    }
}

/// Raw blob samples: one count per frame, one size and distance per blob.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlobSamples {
    pub counts: Vec<f64>,
    pub sizes: Vec<f64>,
    pub center_distances: Vec<f64>,
}

impl BlobSamples {
    pub fn count(&self) -> Stat {
        Stat::of(&self.counts)
    }

    pub fn size(&self) -> Stat {
        Stat::of(&self.sizes)
    }

    pub fn center_distance(&self) -> Stat {
        Stat::of(&self.center_distances)
    }

    pub fn extend(&mut self, other: BlobSamples) {
        self.counts.extend(other.counts);
        self.sizes.extend(other.sizes);
        self.center_distances.extend(other.center_distances);
    }
}

/// Blobs of every input frame of each volume, thresholded relative to the
/// volume's maximum. Volumes should be at input resolution.
pub fn blob_statistics(volumes: &[SaliencyVolume], params: BlobParams) -> BlobSamples {
    let mut out = BlobSamples::default();
    for v in volumes {
        let (h, w) = v.extent();
        let max = v.max();
        for map in v.per_frame() {
            let blobs = if max > 0.0 {
                let normalised: Vec<f32> = map.iter().map(|&x| x / max).collect();
                detect_blobs(&normalised, h, w, params.threshold, params.min_area)
            } else {
                Vec::new()
            };
            out.counts.push(blobs.len() as f64);
            for b in &blobs {
                out.sizes.push(b.area() as f64);
                out.center_distances.push(b.center_distance(h, w));
            }
        }
    }
    out
}

/// Frames whose activation exceeds `threshold`.
pub fn mask_length(mask: &[f32], threshold: f32) -> usize {
    mask.iter().filter(|&&m| m > threshold).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub os: f64,
    pub fs: f64,
    pub rs: f64,
    /// `(OS - FS) / (OS - RS)`, absent when excluded.
    pub ratio: Option<f64>,
    /// `RS - FS`, absent when excluded.
    pub difference: Option<f64>,
    pub excluded: bool,
}

impl DropRecord {
    pub fn new(os: f64, fs: f64, rs: f64, eps: f64) -> DropRecord {
        let excluded = os - rs <= eps || os - fs <= eps;
        let (ratio, difference) = if excluded { (None, None) } else { (Some((os - fs) / (os - rs)), Some(rs - fs)) };
        DropRecord { os, fs, rs, ratio, difference, excluded }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropStats {
    pub epsilon: f64,
    pub records: Vec<DropRecord>,
    pub ratio: Stat,
    pub difference: Stat,
}

impl DropStats {
    pub fn included(&self) -> usize {
        self.records.iter().filter(|r| !r.excluded).count()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.ratio).collect()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.difference).collect()
    }
}

/// Per-record drops of `(OS, FS, RS)` triples and their aggregates.
pub fn drop_statistics(scores: &[(f64, f64, f64)], eps: f64) -> DropStats {
    let records: Vec<DropRecord> = scores.iter().map(|&(os, fs, rs)| DropRecord::new(os, fs, rs, eps)).collect();
    let ratios: Vec<f64> = records.iter().filter_map(|r| r.ratio).collect();
    let diffs: Vec<f64> = records.iter().filter_map(|r| r.difference).collect();
    DropStats { epsilon: eps, ratio: Stat::of(&ratios), difference: Stat::of(&diffs), records }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!("t-test needs >= 2 values per sample, got {} and {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("t-test sample contains non-finite values"));
    }
    let moments = |s: &[f64]| {
        let n = s.len() as f64;
        let m = s.iter().sum::<f64>() / n;
        (m, s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0), n)
    };
    let (ma, va, na) = moments(a);
    let (mb, vb, nb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        // Two constant samples: no evidence of a difference if they agree,
        // an undefined statistic if they do not.
        if ma == mb {
            return Ok(WelchResult { t: 0.0, df: na + nb - 2.0, p: 1.0 });
        }
        return Err(Error::invalid("t-test samples are constant with different values"));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    // P(|T| > t) = I_{df / (df + t^2)}(df / 2, 1 / 2)
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok(WelchResult { t, df, p })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin includes its upper edge.
    pub edges: Vec<f64>,
    /// Fraction of all values per bin.
    pub bins: Vec<f64>,
    /// Fraction of values outside the range.
    pub outliers: f64,
}

/// Normalised histogram over `[lo, hi]`. Bins plus outliers sum to 1 for a
/// non-empty sample and are all zero for an empty one.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram> {
    let (lo, hi) = range;
    if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "histogram needs bins >= 1 and a finite range lo < hi, got {bins}, {range:?}"
        )));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * width }).collect();
    let mut counts = vec![0usize; bins];
    let mut outside = 0;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            outside += 1;
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = values.len().max(1) as f64;
    Ok(Histogram { edges, bins: counts.iter().map(|&c| c as f64 / n).collect(), outliers: outside as f64 / n })
}

/// Shared histogram range for two samples: their joint min and max, widened
/// to a unit interval around a single value.
pub fn joint_range(a: &[f64], b: &[f64]) -> (f64, f64) {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Per-sequence and per-frame samples of one model, the input to [`compare`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelSamples {
    pub model: String,
    pub blobs: BlobSamples,
    pub mask_lengths: Vec<f64>,
    /// `(OS, FS, RS)` per sequence.
    pub scores: Vec<(f64, f64, f64)>,
}

pub const METRICS: [&str; 6] =
    ["blob_count", "blob_size", "center_distance", "mask_length", "drop_ratio", "drop_difference"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub model: String,
    pub sequences: usize,
    pub frames: usize,
    pub blob_count: Stat,
    pub blob_size: Stat,
    pub center_distance: Stat,
    pub mask_length: Stat,
    pub drop_ratio: Stat,
    pub drop_difference: Stat,
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub histograms: Vec<Histogram>,
    /// Absent when a sample is too small, or both are constant and disagree.
    pub ttest: Option<WelchResult>,
    pub ttest_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub blob_params: BlobParams,
    pub drop_epsilon: f64,
    pub histogram_bins: usize,
    pub models: Vec<ModelMetrics>,
    pub comparisons: Vec<MetricComparison>,
}

impl ModelSamples {
    fn metric(&self, name: &str, eps: f64) -> Vec<f64> {
        match name {
            "blob_count" => self.blobs.counts.clone(),
            "blob_size" => self.blobs.sizes.clone(),
            "center_distance" => self.blobs.center_distances.clone(),
            "mask_length" => self.mask_lengths.clone(),
            "drop_ratio" => drop_statistics(&self.scores, eps).ratios(),
            "drop_difference" => drop_statistics(&self.scores, eps).differences(),
            _ => unreachable!("unknown metric {name}"),
        }
    }

    pub fn summarize(&self, eps: f64) -> ModelMetrics {
        let drops = drop_statistics(&self.scores, eps);
        ModelMetrics {
            model: self.model.clone(),
            sequences: self.scores.len(),
            frames: self.blobs.counts.len(),
            blob_count: self.blobs.count(),
            blob_size: self.blobs.size(),
            center_distance: self.blobs.center_distance(),
            mask_length: Stat::of(&self.mask_lengths),
            drop_ratio: drops.ratio,
            drop_difference: drops.difference,
            excluded: drops.records.len() - drops.included(),
        }
    }
}

/// Summaries of both models plus, per metric, histograms on a shared range
/// and a Welch test of `a` against `b`.
pub fn compare(
    a: &ModelSamples,
    b: &ModelSamples,
    bins: usize,
    params: BlobParams,
    eps: f64,
) -> Result<MetricsSummary> {
    let mut comparisons = Vec::new();
    for name in METRICS {
        let (xa, xb) = (a.metric(name, eps), b.metric(name, eps));
        let range = joint_range(&xa, &xb);
        let (ttest, ttest_error) = match welch_ttest(&xa, &xb) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        comparisons.push(MetricComparison {
            metric: name.to_string(),
            histograms: vec![histogram(&xa, bins, range)?, histogram(&xb, bins, range)?],
            ttest,
            ttest_error,
        });
    }
    Ok(MetricsSummary {
        blob_params: params,
        drop_epsilon: eps,
        histogram_bins: bins,
        models: vec![a.summarize(eps), b.summarize(eps)],
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Tensor;

    /// Breadth-first flood fill from every unvisited on-pixel.
    fn flood_fill(on: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
        let mut seen = vec![false; on.len()];
        let mut out = Vec::new();
        for start in 0..on.len() {
            if !on[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let (y, x) = ((i / w) as isize, (i % w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if on[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn square(map: &mut [f32], w: usize, x0: usize, y0: usize, side: usize) {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                map[y * w + x] = 1.0;
            }
        }
    }

    #[test]
    fn empty_map_has_no_blobs() {
        assert!(detect_blobs(&[0.0; 64], 8, 8, 0.4, 4).is_empty());
    }

    #[test]
    fn centred_square() {
        let mut map = vec![0.0; 32 * 32];
        square(&mut map, 32, 13, 13, 5);
        let blobs = detect_blobs(&map, 32, 32, 0.4, 4);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area(), 25);
        assert_eq!(blobs[0].centroid, (15.0, 15.0));
        // The geometric centre of a 32-pixel frame is 15.5.
        assert!((blobs[0].center_distance(31, 31) - 0.0).abs() < 1e-12);
        assert!((blobs[0].center_distance(32, 32) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bridge_merges_two_squares() {
        let mut map = vec![0.0; 16 * 16];
        square(&mut map, 16, 1, 1, 3);
        square(&mut map, 16, 5, 5, 4);
        let blobs = detect_blobs(&map, 16, 16, 0.4, 4);
        assert_eq!(blobs.iter().map(Blob::area).collect::<Vec<_>>(), vec![16, 9]);
        // A diagonal neighbour is enough under 8-connectivity.
        map[4 * 16 + 4] = 1.0;
        let blobs = detect_blobs(&map, 16, 16, 0.4, 4);
        assert_eq!(blobs.len(), 1);
        assert_eq!(blobs[0].area(), 26);
    }

    #[test]
    fn small_components_are_dropped() {
        let mut map = vec![0.0; 8 * 8];
        square(&mut map, 8, 0, 0, 1);
        square(&mut map, 8, 4, 4, 2);
        assert_eq!(detect_blobs(&map, 8, 8, 0.4, 4).len(), 1);
        assert_eq!(detect_blobs(&map, 8, 8, 0.4, 1).len(), 2);
        assert_eq!(detect_blobs(&map, 8, 8, 1.0, 1).len(), 0);
    }

    #[test]
    fn blobs_match_flood_fill_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
            let density = rng.gen_range(0.2..0.7);
            let map: Vec<f32> = (0..h * w)
                .map(|_| if rng.gen_bool(density) { rng.gen_range(0.41..1.0) } else { rng.gen_range(0.0..0.4) })
                .collect();
            let min_area = rng.gen_range(1..5);
            let on: Vec<bool> = map.iter().map(|&v| v > 0.4).collect();
            let mut want: Vec<Vec<usize>> = flood_fill(&on, h, w).into_iter().filter(|c| c.len() >= min_area).collect();
            want.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            let got: Vec<Vec<usize>> = detect_blobs(&map, h, w, 0.4, min_area).into_iter().map(|b| b.pixels).collect();
            assert_eq!(got, want, "trial {trial}");
        }
    }

    fn volume(maps: Vec<f32>, t: usize, h: usize, w: usize) -> SaliencyVolume {
        SaliencyVolume {
            class: 0,
            maps: Tensor::new(vec![t, h, w], maps).unwrap(),
            frame_index_map: (0..t).map(|i| vec![i]).collect(),
        }
    }

    #[test]
    fn blob_statistics_on_fixture() {
        // Frame 0: a centred 3x3 blob. Frame 1: two 2x2 blobs in the corners,
        // one at half the volume maximum. Frame 2: nothing.
        let (h, w) = (9, 9);
        let mut maps = vec![0.0; 3 * h * w];
        square(&mut maps[..h * w], w, 3, 3, 3);
        square(&mut maps[h * w..2 * h * w], w, 0, 0, 2);
        square(&mut maps[h * w..2 * h * w], w, 7, 7, 2);
        for v in &mut maps[h * w + 7 * w + 7..] {
            *v *= 0.5;
        }
        let s = blob_statistics(&[volume(maps, 3, h, w)], BlobParams::default());
        assert_eq!(s.counts, vec![1.0, 2.0, 0.0]);
        assert_eq!(s.sizes, vec![9.0, 4.0, 4.0]);
        let corner = (3.5f64 * 3.5 * 2.0).sqrt();
        assert_eq!(s.center_distances, vec![0.0, corner, corner]);
        assert_eq!(s.count().mean, Some(1.0));
        assert_eq!(s.size().mean, Some(17.0 / 3.0));
    }

    #[test]
    fn blob_statistics_of_empty_volume_are_absent() {
        let s = blob_statistics(&[volume(vec![0.0; 2 * 16], 2, 4, 4)], BlobParams::default());
        assert_eq!(s.count().mean, Some(0.0));
        assert_eq!(s.size(), Stat { n: 0, mean: None, std: None });
        assert_eq!(s.center_distance().mean, None);
    }

    #[test]
    fn mask_lengths() {
        let example = [0., 0., 0., 1., 1., 1., 1., 1., 0., 0., 0., 0., 0., 1., 1., 0.];
        assert_eq!(mask_length(&example, 0.1), 7);
        assert_eq!(mask_length(&[0.0; 16], 0.1), 0);
        assert_eq!(mask_length(&[1.0; 16], 0.1), 16);
    }

    #[test]
    fn drop_arithmetic_from_published_scores() {
        let r = DropRecord::new(0.994, 0.083, 0.856, DROP_EPSILON);
        assert!(!r.excluded);
        assert!((r.ratio.unwrap() - 0.911 / 0.138).abs() < 1e-9);
        assert!((r.ratio.unwrap() - 6.601449275362).abs() < 1e-9);
        assert!((r.difference.unwrap() - 0.773).abs() < 1e-9);
    }

    #[test]
    fn exclusion_rule() {
        let s = drop_statistics(
            &[
                (0.9, 0.2, 0.9),    // OS - RS = 0
                (0.9, 0.2, 0.8995), // OS - RS = 5e-4
                (0.9, 0.9, 0.2),    // OS - FS = 0
                (0.9, 0.8992, 0.2), // OS - FS = 8e-4
                (0.9, 0.1, 0.5),
                (0.9, 0.3, 0.3),
            ],
            DROP_EPSILON,
        );
        let excluded: Vec<bool> = s.records.iter().map(|r| r.excluded).collect();
        assert_eq!(excluded, vec![true, true, true, true, false, false]);
        assert_eq!(s.included(), 2);
        let equal = s.records[5];
        assert_eq!((equal.ratio, equal.difference), (Some(1.0), Some(0.0)));
        for r in s.records.iter().filter(|r| !r.excluded) {
            assert_eq!(r.difference.unwrap(), r.rs - r.fs);
        }
        // A tighter epsilon keeps the near-boundary records.
        assert_eq!(drop_statistics(&[(0.9, 0.2, 0.8995)], 1e-9).included(), 1);
    }

    #[test]
    fn aggregates_ignore_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut recs: Vec<(f64, f64, f64)> = (0..30).map(|_| (rng.gen(), rng.gen(), rng.gen())).collect();
        let a = drop_statistics(&recs, DROP_EPSILON);
        recs.reverse();
        let b = drop_statistics(&recs, DROP_EPSILON);
        assert_eq!(a.included(), b.included());
        assert!((a.ratio.mean.unwrap() - b.ratio.mean.unwrap()).abs() < 1e-12);
        assert!((a.difference.std.unwrap() - b.difference.std.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn welch_matches_reference_values() {
        // Reference values from scipy.stats.ttest_ind(a, b, equal_var=False).
        let r = welch_ttest(&[2.1, 2.5, 2.3, 2.7], &[1.1, 1.4, 1.2]).unwrap();
        assert!((r.t - 7.462025072446364).abs() < 1e-9);
        assert!((r.df - 4.864321608040199).abs() < 1e-9);
        assert!((r.p - 0.0007685454258006665).abs() < 1e-6);
        let r = welch_ttest(&[0.3, 0.9, 1.4, 0.2, 0.8, 1.1], &[1.5, 2.9, 0.4, 2.2, 3.1]).unwrap();
        assert!((r.t + 2.341218275730632).abs() < 1e-9);
        assert!((r.df - 5.167585747671328).abs() < 1e-9);
        assert!((r.p - 0.06460917813226331).abs() < 1e-6);
    }

    #[test]
    fn welch_limits_and_symmetry() {
        let a = [1.0, 2.0, 3.5, 0.5];
        let same = welch_ttest(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let zeros: Vec<f64> = (0..5).map(|i| i as f64 * 1e-6).collect();
        let ones: Vec<f64> = (0..5).map(|i| 1.0 + i as f64 * 1e-6).collect();
        assert!(welch_ttest(&zeros, &ones).unwrap().p < 1e-6);
        let b = [2.0, 4.0, 3.0];
        let (ab, ba) = (welch_ttest(&a, &b).unwrap(), welch_ttest(&b, &a).unwrap());
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
        assert!(welch_ttest(&[1.0], &b).is_err());
        assert!(welch_ttest(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        let c = welch_ttest(&[3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!((c.t, c.p), (0.0, 1.0));
    }

    #[test]
    fn histograms() {
        let h = histogram(&[0.3], 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.bins, vec![0.0, 1.0, 0.0, 0.0]);
        let grid: Vec<f64> = (0..8).map(|i| 0.0625 + i as f64 * 0.125).collect();
        assert_eq!(histogram(&grid, 4, (0.0, 1.0)).unwrap().bins, vec![0.25; 4]);
        // Hand binning over [0, 5) in unit bins, 5 closing the last bin.
        let ten = [0.0, 0.5, 1.0, 1.2, 2.9, 3.0, 4.99, 5.0, -0.1, 7.0];
        let h = histogram(&ten, 5, (0.0, 5.0)).unwrap();
        assert_eq!(h.bins, vec![0.2, 0.2, 0.1, 0.1, 0.2]);
        assert!((h.outliers - 0.2).abs() < 1e-12);
        assert!((h.bins.iter().sum::<f64>() + h.outliers - 1.0).abs() < 1e-12);
        assert_eq!(h.edges, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(histogram(&ten, 0, (0.0, 1.0)).is_err());
    }

    #[test]
    fn comparing_a_model_with_itself() {
        let s = ModelSamples {
            model: "m".into(),
            blobs: BlobSamples {
                counts: vec![1.0, 2.0, 1.0],
                sizes: vec![4.0, 9.0, 5.0, 6.0],
                center_distances: vec![1.0, 2.0, 3.0, 0.5],
            },
            mask_lengths: vec![3.0, 5.0, 4.0],
            scores: vec![(0.9, 0.1, 0.5), (0.8, 0.2, 0.3), (0.95, 0.5, 0.7)],
        };
        let summary = compare(&s, &s, 10, BlobParams::default(), DROP_EPSILON).unwrap();
        assert_eq!(summary.comparisons.len(), 6);
        for c in &summary.comparisons {
            let t = c.ttest.unwrap();
            assert_eq!((t.t, t.p), (0.0, 1.0), "{}", c.metric);
            assert_eq!(c.histograms[0], c.histograms[1]);
        }
    }
}
