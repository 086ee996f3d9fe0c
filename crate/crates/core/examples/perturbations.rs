//! Freeze and reverse perturbations of a clip under a temporal mask.
//!
//! cargo run --release --example perturbations

use vidsal::data::{ClipSpec, MotionClass, Sample};
use vidsal::perturb::{apply_freeze, apply_reverse, extract_submasks, reverse_order, ACTIVE_THRESHOLD};
use vidsal::Tensor;

fn centroid_x(frame: &Tensor) -> f32 {
    let w = frame.shape()[1];
    let (mut m, mut mx) = (0.0, 0.0);
    for (i, &v) in frame.data().iter().enumerate() {
        let v = (v - 0.1).max(0.0);
        m += v;
        mx += v * (i % w) as f32;
    }
    mx / m.max(1e-6)
}

fn track(clip: &Tensor) -> String {
    (0..clip.shape()[0]).map(|t| format!("{:4.1}", centroid_x(&clip.index_outer(t)))).collect::<Vec<_>>().join(" ")
}

fn main() -> anyhow::Result<()> {
    let s = Sample::render("demo", ClipSpec::sample(MotionClass::MoveRight, 3), &MotionClass::ALL, 16)?;
    let mut m = vec![0.0f32; 16];
    for (t, v) in m.iter_mut().enumerate() {
        *v = match t {
            3..=6 => 1.0,
            7 => 0.5,
            10..=12 => 0.9,
            _ => 0.02,
        };
    }
    println!("mask      {:?}", m);
    println!("submasks  {:?}", extract_submasks(&m, ACTIVE_THRESHOLD));
    println!("order     {:?}", reverse_order(&m, ACTIVE_THRESHOLD));
    println!("\nobject x per frame");
    println!("original  {}", track(&s.clip));
    println!("frozen    {}", track(&apply_freeze(&s.clip, &m)?));
    println!("reversed  {}", track(&apply_reverse(&s.clip, &m, ACTIVE_THRESHOLD)?));
    Ok(())
}
