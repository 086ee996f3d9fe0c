use super::*;

#[test]
fn reversed_clip_equals_mirror_class_clip() {
    for seed in 0..6 {
        for class in [MotionClass::MoveRight, MotionClass::MoveDown, MotionClass::Approach, MotionClass::MoveLeft] {
            let spec = ClipSpec::sample(class, seed);
            let mirror = spec.mirrored().unwrap();
            assert_eq!(mirror.class, class.mirror().unwrap());
            let (a, _) = generate_clip(&spec).unwrap();
            let (b, _) = generate_clip(&mirror).unwrap();
            assert_eq!(reverse_frames(&a), b, "{class} seed {seed}");
        }
    }
}

#[test]
fn paired_classes_share_the_canonical_trajectory() {
    let right = ClipSpec::sample(MotionClass::MoveRight, 11);
    let left = ClipSpec::sample(MotionClass::MoveLeft, 11);
    assert_eq!(right.mirrored().unwrap(), left);
}

#[test]
fn same_spec_renders_bit_identically() {
    let spec = ClipSpec::sample(MotionClass::PassEachOther, 3);
    assert_eq!(generate_clip(&spec).unwrap().0, generate_clip(&spec).unwrap().0);
}

#[test]
fn collide_contact_maps_to_subsampled_window() {
    let spec = ClipSpec::collide_at(7, 64, 40).unwrap();
    let (_, raw) = generate_clip(&spec).unwrap();
    let raw = raw.unwrap();
    assert_eq!((raw.start, raw.end), (36, 44));
    let sub = raw.subsampled(64, 16);
    assert_eq!((sub.start, sub.end), (9, 11));
}

/// Frames in which some pixel carries coverage from both sprites.
fn touching_frames(spec: &ClipSpec, frames: &[usize]) -> Vec<usize> {
    frames
        .iter()
        .copied()
        .filter(|&f| {
            let c = spec.canonical_frame(f);
            let (xa, ya) = spec.position(0, c);
            let (xb, yb) = spec.position(1, c);
            let a = object_coverage(&spec.sprites[0], xa, ya, spec.size);
            let b = object_coverage(&spec.sprites[1], xb, yb, spec.size);
            a.iter().zip(&b).any(|(&p, &q)| p > 0.0 && q > 0.0)
        })
        .collect()
}

#[test]
fn collide_objects_touch_only_inside_the_event_window() {
    for seed in 0..40 {
        let spec = ClipSpec::sample(MotionClass::Collide, seed);
        let all: Vec<usize> = (0..spec.raw_len).collect();
        let raw = spec.raw_event().unwrap();
        let want: Vec<usize> = (raw.start..=raw.end).collect();
        assert_eq!(touching_frames(&spec, &all), want, "seed {seed}");

        let idx = subsample_indices(spec.raw_len, CLIP_LEN);
        let sub = raw.subsampled(spec.raw_len, CLIP_LEN);
        let touching: Vec<usize> = (0..CLIP_LEN).filter(|&i| !touching_frames(&spec, &[idx[i]]).is_empty()).collect();
        assert_eq!(touching, (sub.start..=sub.end).collect::<Vec<_>>(), "seed {seed}");
    }
}

#[test]
fn non_colliding_classes_never_touch() {
    for seed in 0..20 {
        for class in [MotionClass::Approach, MotionClass::Retreat, MotionClass::PassEachOther] {
            let spec = ClipSpec::sample(class, seed);
            let all: Vec<usize> = (0..spec.raw_len).collect();
            assert!(touching_frames(&spec, &all).is_empty(), "{class} seed {seed}");
        }
    }
}

#[test]
fn pass_event_marks_horizontal_crossing() {
    for seed in 0..10 {
        let spec = ClipSpec::sample(MotionClass::PassEachOther, seed);
        let w = spec.raw_event().unwrap();
        assert!(w.start > 0 && w.end < spec.raw_len - 1);
        let (xa, _) = spec.position(0, w.start);
        let (xb, _) = spec.position(1, w.start);
        assert!((xa - xb).abs() < spec.sprites[0].size.max(spec.sprites[1].size));
    }
}

#[test]
fn sampled_trajectories_stay_in_frame() {
    for seed in 0..50 {
        for class in MotionClass::ALL {
            let spec = ClipSpec::sample(class, seed);
            spec.validate().unwrap_or_else(|e| panic!("{class} seed {seed}: {e}"));
            for f in 0..spec.raw_len {
                for (o, sp) in spec.sprites.iter().enumerate() {
                    let (x, y) = spec.position(o, f);
                    assert!(x >= 0.0 && y >= 0.0 && x + sp.size <= 32.0 && y + sp.size <= 32.0);
                }
            }
        }
    }
}

#[test]
fn oversized_sprite_is_rejected() {
    let mut spec = ClipSpec::sample(MotionClass::MoveRight, 1);
    spec.sprites[0].size = 40.0;
    assert!(generate_clip(&spec).is_err());
}

#[test]
fn subsample_index_rule() {
    assert_eq!(subsample_indices(32, 16), (0..16).map(|i| 2 * i).collect::<Vec<_>>());
    assert_eq!(subsample_indices(16, 16), (0..16).collect::<Vec<_>>());
    assert_eq!(subsample_indices(48, 16), (0..16).map(|i| 3 * i).collect::<Vec<_>>());

    let clip = Tensor::new(vec![48, 1], (0..48).map(|v| v as f32).collect::<Vec<_>>()).unwrap();
    let sub = subsample(&clip, 16).unwrap();
    assert_eq!(sub.data(), (0..16).map(|i| (3 * i) as f32).collect::<Vec<_>>().as_slice());
    assert_eq!(subsample(&sub, 16).unwrap(), sub);
    assert!(subsample(&sub, 17).is_err());
}

#[test]
fn dataset_split_is_stratified_and_seeded() {
    let ds = make_dataset(&MotionClass::ALL, 50, 0.8, 4).unwrap();
    assert_eq!((ds.train.len(), ds.val.len()), (320, 80));
    for label in 0..8 {
        assert_eq!(ds.train.iter().filter(|s| s.label == label).count(), 40);
        assert_eq!(ds.val.iter().filter(|s| s.label == label).count(), 10);
    }
    let again = make_dataset(&MotionClass::ALL, 50, 0.8, 4).unwrap();
    let ids = |v: &[Sample]| v.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&ds.val), ids(&again.val));
    assert_eq!(ds.val[3].clip, again.val[3].clip);
    let train_ids = ids(&ds.train);
    assert!(ids(&ds.val).iter().all(|id| !train_ids.contains(id)));
    for s in ds.train.iter().chain(&ds.val) {
        assert_eq!(s.clip.shape(), &[16, 32, 32, 1]);
        assert_eq!(s.event.is_some(), s.spec.class.has_event());
    }
}

#[test]
fn dataset_rejects_bad_arguments() {
    assert!(make_dataset(&MotionClass::ALL, 1, 0.8, 0).is_err());
    assert!(make_dataset(&[MotionClass::Collide], 10, 0.8, 0).is_err());
    assert!(make_dataset(&MotionClass::ALL, 10, 1.0, 0).is_err());
}

#[test]
fn class_names_round_trip() {
    for c in MotionClass::ALL {
        assert_eq!(c.name().parse::<MotionClass>().unwrap(), c);
    }
    assert!("sideways".parse::<MotionClass>().is_err());
}
