//! Trains both classifiers on the synthetic motion set and checks how they
//! react to fully reversed validation clips.
//!
//! cargo run --release --example train_classifiers [-- per_class epochs]

use std::time::Instant;

use vidsal::data::{make_dataset, reverse_frames, MotionClass};
use vidsal::models::{argmax, batch_scores, train, ModelConfig, ModelKind, TrainConfig};

fn main() -> anyhow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let per_class = args.first().copied().unwrap_or(50);
    let epochs = args.get(1).copied();
    let t0 = Instant::now();
    let ds = make_dataset(&MotionClass::ALL, per_class, 0.8, 7)?;
    println!("dataset: {} train / {} val in {:.1?}", ds.train.len(), ds.val.len(), t0.elapsed());

    for kind in [ModelKind::Conv3d, ModelKind::Convlstm] {
        let mut hp = TrainConfig::default_for(kind);
        if let Some(e) = epochs {
            hp.epochs = e;
        }
        let t = Instant::now();
        let ckpt = train(&ModelConfig::default_for(kind, ds.num_classes()), &ds, &hp)?;
        let losses: Vec<String> = ckpt.meta.epoch_loss.iter().map(|l| format!("{l:.3}")).collect();
        println!(
            "{kind}: val accuracy {:.3} in {:.1?}; loss {}",
            ckpt.meta.val_accuracy,
            t.elapsed(),
            losses.join(" ")
        );

        let paired: Vec<_> = ds.val.iter().filter(|s| s.spec.class.mirror().is_some()).collect();
        let reversed: Vec<_> = paired.iter().map(|s| reverse_frames(&s.clip)).collect();
        let scores = batch_scores(&ckpt.model, &reversed)?;
        let kept = paired.iter().zip(&scores).filter(|(s, p)| argmax(p) == s.label).count();
        let swapped =
            paired.iter().zip(&scores).filter(|(s, p)| ds.classes[argmax(p)] == s.spec.class.mirror().unwrap()).count();
        println!(
            "{kind}: reversed direction-paired clips: accuracy {:.3}, predicted as mirror class {:.3}",
            kept as f64 / paired.len() as f64,
            swapped as f64 / paired.len() as f64
        );
    }
    Ok(())
}
