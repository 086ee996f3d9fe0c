use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{read_manifest, ExplanationRecord, OutputDir, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{compare, MetricsSummary, ModelSamples};

/// Header of every `sequences.csv`, in order.
pub const SEQUENCE_COLUMNS: [&str; 24] = [
    "clip_id",
    "class",
    "model",
    "true_class",
    "target_class",
    "predicted_class",
    "os",
    "fs",
    "rs",
    "drop_ratio",
    "drop_difference",
    "excluded",
    "mask_length",
    "mask",
    "blob_count_mean",
    "blob_size_mean",
    "center_distance_mean",
    "event_start",
    "event_end",
    "event_recall",
    "crop_start",
    "crop_end",
    "crop_score",
    "crop_mask_iou",
];

#[derive(Serialize)]
struct SequenceRow<'a> {
    clip_id: &'a str,
    class: &'a str,
    model: &'a str,
    true_class: usize,
    target_class: usize,
    predicted_class: usize,
    os: f32,
    fs: f32,
    rs: f32,
    drop_ratio: Option<f64>,
    drop_difference: Option<f64>,
    excluded: bool,
    mask_length: usize,
    /// One character per frame: 1 active, 0 not.
    mask: String,
    blob_count_mean: Option<f64>,
    blob_size_mean: Option<f64>,
    center_distance_mean: Option<f64>,
    event_start: Option<usize>,
    event_end: Option<usize>,
    event_recall: Option<f64>,
    crop_start: Option<usize>,
    crop_end: Option<usize>,
    crop_score: Option<f32>,
    crop_mask_iou: Option<f64>,
}

/// One CSV row per record with the header [`SEQUENCE_COLUMNS`].
pub(crate) fn write_sequences(records: &[ExplanationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SEQUENCE_COLUMNS)?;
    for r in records {
        w.serialize(SequenceRow {
            clip_id: &r.clip_id,
            class: &r.class_name,
            model: &r.model,
            true_class: r.true_class,
            target_class: r.target_class,
            predicted_class: r.predicted_class,
            os: r.os,
            fs: r.fs,
            rs: r.rs,
            drop_ratio: r.drop_ratio,
            drop_difference: r.drop_difference,
            excluded: r.excluded,
            mask_length: r.mask_length,
            mask: r.active.iter().map(|&a| if a { '1' } else { '0' }).collect(),
            blob_count_mean: r.blobs.count().mean,
            blob_size_mean: r.blobs.size().mean,
            center_distance_mean: r.blobs.center_distance().mean,
            event_start: r.event.map(|e| e.start),
            event_end: r.event.map(|e| e.end),
            event_recall: r.event_recall,
            crop_start: r.crop.as_ref().map(|c| c.start),
            crop_end: r.crop.as_ref().map(|c| c.end),
            crop_score: r.crop.as_ref().map(|c| c.score),
            crop_mask_iou: r.crop.as_ref().map(|c| c.mask_iou),
        })?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// The records listed in an explanation directory's manifest, in order.
pub fn load_records(dir: &Path) -> Result<Vec<ExplanationRecord>> {
    let manifest = read_manifest(dir)?;
    if !manifest.command.starts_with("explain") {
        return Err(Error::invalid(format!(
            "{} holds a {:?} run, not an explanation",
            dir.display(),
            manifest.command
        )));
    }
    let mut out = Vec::new();
    for rel in manifest.outputs.iter().filter(|p| p.ends_with("record.json")) {
        let path = dir.join(rel);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        out.push(serde_json::from_str(&text)?);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{} contains no explanation records", dir.display())));
    }
    Ok(out)
}

fn samples(name: String, records: &[ExplanationRecord]) -> ModelSamples {
    let mut s = ModelSamples { model: name, ..Default::default() };
    for r in records {
        s.blobs.extend(r.blobs.clone());
        s.mask_lengths.push(r.mask_length as f64);
        s.scores.push((r.os as f64, r.fs as f64, r.rs as f64));
    }
    s
}

fn histogram_csv(summary: &MetricsSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "model", "bin", "lo", "hi", "fraction"])?;
    for c in &summary.comparisons {
        for (m, h) in summary.models.iter().zip(&c.histograms) {
            for (i, f) in h.bins.iter().enumerate() {
                w.write_record([
                    c.metric.clone(),
                    m.model.clone(),
                    i.to_string(),
                    h.edges[i].to_string(),
                    h.edges[i + 1].to_string(),
                    f.to_string(),
                ])?;
            }
            w.write_record([
                c.metric.clone(),
                m.model.clone(),
                "outliers".into(),
                String::new(),
                String::new(),
                h.outliers.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

fn ttest_csv(summary: &MetricsSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "model_a", "model_b", "n_a", "n_b", "mean_a", "mean_b", "t", "df", "p", "note"])?;
    let (a, b) = (&summary.models[0], &summary.models[1]);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &summary.comparisons {
        let (sa, sb) = match c.metric.as_str() {
            "blob_count" => (a.blob_count, b.blob_count),
            "blob_size" => (a.blob_size, b.blob_size),
            "center_distance" => (a.center_distance, b.center_distance),
            "mask_length" => (a.mask_length, b.mask_length),
            "drop_ratio" => (a.drop_ratio, b.drop_ratio),
            _ => (a.drop_difference, b.drop_difference),
        };
        w.write_record([
            c.metric.clone(),
            a.model.clone(),
            b.model.clone(),
            sa.n.to_string(),
            sb.n.to_string(),
            opt(sa.mean),
            opt(sb.mean),
            opt(c.ttest.map(|t| t.t)),
            opt(c.ttest.map(|t| t.df)),
            opt(c.ttest.map(|t| t.p)),
            c.ttest_error.clone().unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Compares two explanation directories: `summary.json`, `sequences.csv`,
/// `histograms.csv` and `ttest.csv` in `out`.
pub fn run_compare(config: &RunConfig, a: &Path, b: &Path, out: &Path) -> Result<MetricsSummary> {
    if config.compare.bins == 0 {
        return Err(Error::invalid("histogram bins must be >= 1"));
    }
    let (ra, rb) = (load_records(a)?, load_records(b)?);
    let (mut na, mut nb) = (ra[0].model.clone(), rb[0].model.clone());
    if na == nb {
        na.push_str("_a");
        nb.push_str("_b");
    }
    let cmp = &config.compare;
    let summary = compare(&samples(na, &ra), &samples(nb, &rb), cmp.bins, cmp.blob_params(), cmp.drop_epsilon)?;
    let mut dir = OutputDir::create(out)?;
    dir.write_json("summary.json", &summary)?;
    let all: Vec<ExplanationRecord> = ra.into_iter().chain(rb).collect();
    dir.write("sequences.csv", &write_sequences(&all)?)?;
    dir.write("histograms.csv", &histogram_csv(&summary)?)?;
    dir.write("ttest.csv", &ttest_csv(&summary)?)?;
    dir.finish("compare", config, vec![a.to_path_buf(), b.to_path_buf()])?;
    Ok(summary)
}
