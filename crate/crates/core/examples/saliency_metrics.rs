//! Blob detection, drop scores, histograms and Welch's t-test on
//! hand-made inputs.
//!
//! cargo run --release --example saliency_metrics

use vidsal::metrics::{
    detect_blobs, drop_statistics, histogram, joint_range, welch_ttest, BLOB_MIN_AREA, BLOB_THRESHOLD,
};

fn main() -> anyhow::Result<()> {
    let (h, w) = (12, 12);
    let mut map = vec![0.0f32; h * w];
    for (y, x, v) in [
        (2, 2, 1.0),
        (2, 3, 0.9),
        (3, 2, 0.8),
        (3, 3, 0.7),
        (8, 8, 0.6),
        (8, 9, 0.6),
        (9, 9, 0.5),
        (9, 10, 0.5),
        (5, 10, 0.9),
    ] {
        map[y * w + x] = v;
    }
    for b in detect_blobs(&map, h, w, BLOB_THRESHOLD, BLOB_MIN_AREA) {
        println!("blob area {} centroid {:?} distance to centre {:.3}", b.area(), b.centroid, b.center_distance(h, w));
    }

    let scores = [(0.9, 0.3, 0.1), (0.8, 0.8, 0.7), (0.0005, 0.0001, 0.0), (0.95, 0.5, 0.2)];
    let d = drop_statistics(&scores, 1e-3);
    println!(
        "\ndrop ratios {:?}, differences {:?}, {} of {} included",
        d.ratios(),
        d.differences(),
        d.included(),
        scores.len()
    );

    let a = [2.1, 2.5, 2.3, 2.7];
    let b = [1.1, 1.4, 1.2];
    let t = welch_ttest(&a, &b)?;
    println!("\nWelch t = {:.6}, df = {:.6}, p = {:.3e}", t.t, t.df, t.p);
    let range = joint_range(&a, &b);
    for (name, v) in [("a", &a[..]), ("b", &b[..])] {
        let hist = histogram(v, 4, range)?;
        println!("histogram {name}: edges {:?} fractions {:?}", hist.edges, hist.bins);
    }
    Ok(())
}
