//! The command-line workflow from library calls: generate, train both
//! models, explain a few clips each, compare.
//!
//! cargo run --release --example pipeline [-- out_root]

use std::path::PathBuf;

use vidsal::data::MotionClass;
use vidsal::models::ModelKind;
use vidsal::pipeline::{run_compare, run_explain, run_generate, run_train, RunConfig};

fn main() -> anyhow::Result<()> {
    let root =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vidsal_pipeline"));
    let mut config = RunConfig::default();
    config.data.classes = vec![MotionClass::MoveLeft, MotionClass::MoveRight, MotionClass::Collide];
    config.data.clips_per_class = 15;
    config.explain.max_clips = Some(6);
    config.mask.iterations = 100;
    run_generate(&config, &root.join("data"))?;
    let mut explained = Vec::new();
    for kind in [ModelKind::Conv3d, ModelKind::Convlstm] {
        let ckpt = run_train(&config, kind, &root.join("data"), &root.join(kind.tag()))?;
        println!("{kind}: val accuracy {:.3}", ckpt.meta.val_accuracy);
        let out = root.join(format!("explain_{kind}"));
        let records = run_explain(&config, &root.join(kind.tag()), &root.join("data"), &out, 1)?;
        println!("{kind}: {} clips explained", records.len());
        explained.push(out);
    }
    let summary = run_compare(&config, &explained[0], &explained[1], &root.join("compare"))?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary.comparisons.iter().map(|c| (&c.metric, c.ttest)).collect::<Vec<_>>())?
    );
    println!("outputs under {}", root.display());
    Ok(())
}
