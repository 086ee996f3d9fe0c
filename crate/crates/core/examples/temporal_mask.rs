//! Learns temporal masks for validation clips of a freshly trained 3D net
//! and prints the masks next to the planted event windows.
//!
//! cargo run --release --example temporal_mask [-- lambda1]

mod common;

use vidsal::mask::{optimize_mask, MaskOptConfig};

fn main() -> anyhow::Result<()> {
    let (ds, ckpt) = common::quick_model()?;
    let mut cfg = MaskOptConfig::default();
    if let Some(l) = std::env::args().nth(1) {
        cfg.lambda1 = l.parse()?;
    }
    for s in &ds.val {
        let r = optimize_mask(&ckpt.model, &s.clip, s.label, &cfg)?;
        let bar: String = r.active.iter().map(|&a| if a { '#' } else { '.' }).collect();
        let event = s.event.map(|e| format!("event {}..={}", e.start, e.end)).unwrap_or_default();
        println!(
            "{:<22} {bar}  os {:.3} fs {:.3} rs {:.3}  loss {:.4} -> {:.4}  {event}",
            s.id, r.os, r.fs, r.rs, r.loss_trace[0], r.final_loss
        );
    }
    Ok(())
}
