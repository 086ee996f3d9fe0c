//! Grad-CAM for a few validation clips, written as PGM maps and PNG overlays.
//!
//! cargo run --release --example gradcam_export [-- out_dir]

mod common;

use std::path::PathBuf;

use vidsal::gradcam::{export_volume, gradcam, gradcam_at_input};

fn main() -> anyhow::Result<()> {
    let (ds, ckpt) = common::quick_model()?;
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vidsal_gradcam"));
    for s in ds.val.iter().step_by(4) {
        let coarse = gradcam(&ckpt.model, &s.clip, s.label)?;
        let vol = gradcam_at_input(&ckpt.model, &s.clip, s.label)?;
        let peaks: Vec<String> =
            vol.per_frame().iter().map(|m| format!("{:.2}", m.iter().cloned().fold(0.0, f32::max))).collect();
        let dir = out.join(&s.id);
        std::fs::create_dir_all(&dir)?;
        let files = export_volume(&vol, &s.clip, &dir)?;
        println!(
            "{:<22} {} steps of {:?} -> {} frames; per-frame peaks {}; {} files in {}",
            s.id,
            coarse.steps(),
            coarse.extent(),
            vol.input_frames(),
            peaks.join(" "),
            files.len(),
            dir.display()
        );
    }
    Ok(())
}
