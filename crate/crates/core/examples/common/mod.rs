use vidsal::data::{make_dataset, Dataset, MotionClass};
use vidsal::models::{train, ModelCheckpoint, ModelConfig, ModelKind, TrainConfig};

/// A 3D net trained for a few seconds on four classes, two with events.
pub fn quick_model() -> anyhow::Result<(Dataset, ModelCheckpoint)> {
    let classes = [MotionClass::MoveLeft, MotionClass::MoveRight, MotionClass::Collide, MotionClass::PassEachOther];
    let ds = make_dataset(&classes, 40, 0.8, 7)?;
    let kind = ModelKind::Conv3d;
    let hp = TrainConfig { epochs: 20, ..TrainConfig::default_for(kind) };
    let ckpt = train(&ModelConfig::default_for(kind, ds.num_classes()), &ds, &hp)?;
    println!("trained {kind} on {} clips: val accuracy {:.3}", ds.train.len(), ckpt.meta.val_accuracy);
    Ok((ds, ckpt))
}
