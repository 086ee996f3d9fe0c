//! Exhaustive temporal crop search on event clips, compared with the
//! learned mask.
//!
//! cargo run --release --example crop_oracle

mod common;

use vidsal::crop::{exhaustive_crop_search, mask_crop_agreement};
use vidsal::mask::{optimize_mask, MaskOptConfig};

fn main() -> anyhow::Result<()> {
    let (ds, ckpt) = common::quick_model()?;
    for s in ds.val.iter().filter(|s| s.event.is_some()) {
        let ev = s.event.unwrap();
        let c = exhaustive_crop_search(&ckpt.model, &s.clip, s.label)?;
        let m = optimize_mask(&ckpt.model, &s.clip, s.label, &MaskOptConfig::default())?;
        let runner_up = c
            .table
            .iter()
            .filter(|e| (e.start, e.end) != (c.best.start, c.best.end))
            .map(|e| e.score)
            .fold(0.0, f32::max);
        println!(
            "{:<22} event {:>2}..={:<2} best crop {:>2}..={:<2} score {:.3} (next {:.3}, {} crops)  hits event {}  mask IoU {:.2}",
            s.id,
            ev.start,
            ev.end,
            c.best.start,
            c.best.end,
            c.best_score,
            runner_up,
            c.table.len(),
            c.best.start <= ev.end && ev.start <= c.best.end,
            mask_crop_agreement(&m.active, c.best)
        );
    }
    Ok(())
}
