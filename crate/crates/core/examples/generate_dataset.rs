//! Renders one clip per motion class, prints its event window, and writes a
//! small dataset to disk.
//!
//! cargo run --release --example generate_dataset [-- out_dir]

use std::path::PathBuf;

use vidsal::data::{generate_clip, reverse_frames, ClipSpec, MotionClass, Sample};
use vidsal::pipeline::{run_generate, RunConfig};

fn main() -> anyhow::Result<()> {
    for (i, &class) in MotionClass::ALL.iter().enumerate() {
        let s = Sample::render(class.name(), ClipSpec::sample(class, i as u64), &MotionClass::ALL, 16)?;
        let energy: Vec<String> =
            (0..16).map(|t| format!("{:.0}", s.clip.index_outer(t).data().iter().sum::<f32>())).collect();
        println!("{:<16} {:?} event {:?}  frame mass {}", class.name(), s.clip.shape(), s.event, energy.join(" "));
    }

    let spec = ClipSpec::sample(MotionClass::MoveRight, 11);
    // Raw frames: subsampling starts at frame 0 and is not symmetric in time.
    let (right, _) = generate_clip(&spec)?;
    let (left, _) = generate_clip(&spec.mirrored().unwrap())?;
    println!("\nreversed move_right == mirrored move_left: {}", reverse_frames(&right) == left);

    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vidsal_dataset"));
    let mut config = RunConfig::default();
    config.data.clips_per_class = 10;
    let ds = run_generate(&config, &out)?;
    println!("wrote {} train / {} val clips to {}", ds.train.len(), ds.val.len(), out.display());
    Ok(())
}
