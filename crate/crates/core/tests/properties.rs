//! Property tests for the curation primitives.

use proptest::prelude::*;

use curate_core::coverage::{
    bin_of, flatten_weights, histogram, select_diverse, select_targeted, BinSpec,
};
use curate_core::dtw::{dtw, pair_tracks, pair_tracks_seq, step_distance, DistanceWeights};
use curate_core::features::{approach_segment, resample, FeatureStep, FeatureTrack};
use curate_core::geom::Quat;
use curate_core::records::{parse_record, record_line, TRAJECTORY_SCHEMA};
use curate_core::trajectory::{
    CameraSpec, EmbodimentDescriptor, Pool, PoolRole, Pose, TimeStep, Trajectory,
};

fn quat_strategy() -> impl Strategy<Value = Quat> {
    (
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        0.01f64..std::f64::consts::PI,
    )
        .prop_map(|(x, y, z, angle)| Quat::from_axis_angle([x, y, z.max(0.1)], angle))
}

fn step_strategy() -> impl Strategy<Value = FeatureStep> {
    (
        prop::array::uniform3(-1.0f64..1.0),
        quat_strategy(),
        0.0f64..=1.0,
        0.0f64..2.0,
    )
        .prop_map(|(position, orientation, gripper, progress)| FeatureStep {
            position,
            orientation,
            gripper,
            progress,
        })
}

fn track_strategy(min_len: usize, max_len: usize) -> impl Strategy<Value = FeatureTrack> {
    prop::collection::vec(step_strategy(), min_len..=max_len).prop_flat_map(|steps| {
        let len = steps.len();
        (Just(steps), prop::option::of(0..len)).prop_map(|(steps, event_index)| FeatureTrack {
            trajectory_id: "prop".to_string(),
            steps,
            event_index,
        })
    })
}

/// Enumerate every monotone path, folding step costs left-to-right —
/// the same association order as the DP recurrence.
fn brute_force_dtw(a: &FeatureTrack, b: &FeatureTrack, w: &DistanceWeights) -> f64 {
    fn walk(
        a: &FeatureTrack,
        b: &FeatureTrack,
        w: &DistanceWeights,
        i: usize,
        j: usize,
        acc: f64,
        best: &mut f64,
    ) {
        let acc = acc + step_distance(&a.steps[i], &b.steps[j], w);
        if i == a.len() - 1 && j == b.len() - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, w, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, w, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, w, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, w, 0, 0, 0.0, &mut best);
    best
}

proptest! {
    #[test]
    fn resample_preserves_endpoints_and_is_idempotent(
        track in track_strategy(2, 40),
        target in 2usize..80,
    ) {
        let out = resample(&track, target).unwrap();
        prop_assert_eq!(out.len(), target);
        prop_assert_eq!(&out.steps[0], &track.steps[0]);
        prop_assert_eq!(&out.steps[target - 1], &track.steps[track.len() - 1]);
        let again = resample(&out, target).unwrap();
        prop_assert_eq!(&again, &out);
    }

    #[test]
    fn resample_keeps_constant_channels_constant(
        step in step_strategy(),
        len in 2usize..30,
        target in 2usize..60,
    ) {
        let track = FeatureTrack {
            trajectory_id: "const".to_string(),
            steps: vec![step.clone(); len],
            event_index: None,
        };
        let out = resample(&track, target).unwrap();
        for s in &out.steps {
            prop_assert_eq!(s.position, step.position);
            prop_assert_eq!(s.gripper, step.gripper);
            prop_assert_eq!(s.progress, step.progress);
            // acos near 1 floors the measurable angle around sqrt(eps).
            prop_assert!(s.orientation.geodesic_angle(&step.orientation) < 1e-6);
        }
    }

    #[test]
    fn approach_segment_is_a_prefix(track in track_strategy(1, 30)) {
        let seg = approach_segment(&track);
        prop_assert!(seg.len() <= track.len());
        for (a, b) in seg.steps.iter().zip(track.steps.iter()) {
            prop_assert_eq!(a, b);
        }
        match track.event_index {
            Some(e) => {
                prop_assert_eq!(seg.len(), e + 1);
                prop_assert_eq!(seg.event_index, Some(e));
            }
            None => prop_assert_eq!(seg.len(), track.len()),
        }
    }

    #[test]
    fn dtw_is_symmetric_and_nonnegative(
        a in track_strategy(1, 12),
        b in track_strategy(1, 12),
    ) {
        let w = DistanceWeights::default();
        let (cab, path) = dtw(&a, &b, &w, None).unwrap();
        let (cba, _) = dtw(&b, &a, &w, None).unwrap();
        prop_assert!(cab >= 0.0);
        prop_assert_eq!(cab, cba);
        prop_assert!(path.is_valid(a.len(), b.len()));
    }

    #[test]
    fn dtw_equals_brute_force_below_combined_length_eight(
        a in track_strategy(1, 4),
        b in track_strategy(1, 4),
    ) {
        let w = DistanceWeights::default();
        let (cost, _) = dtw(&a, &b, &w, None).unwrap();
        let oracle = brute_force_dtw(&a, &b, &w);
        prop_assert_eq!(cost, oracle);
    }

    #[test]
    fn parallel_pairing_matches_sequential(
        targets in prop::collection::vec(track_strategy(2, 8), 1..5),
        sources in prop::collection::vec(track_strategy(2, 8), 1..5),
    ) {
        let w = DistanceWeights::default();
        let par = pair_tracks(&targets, &sources, &w, None).unwrap();
        let seq = pair_tracks_seq(&targets, &sources, &w, None).unwrap();
        prop_assert_eq!(par, seq);
    }
}

fn tagged_trajectory(id: &str, tag: &str) -> Trajectory {
    Trajectory {
        trajectory_id: id.to_string(),
        embodiment: EmbodimentDescriptor {
            embodiment_id: "emb".to_string(),
            platform_class: "p".to_string(),
            gripper_class: "g".to_string(),
            kinematic_scale: 1.0,
            gripper_aperture_range: None,
        },
        task_id: "task".to_string(),
        task_prompt: "x".to_string(),
        scene_id: "s".to_string(),
        camera: CameraSpec {
            azimuth_deg: 15.0,
            elevation_deg: 5.0,
            distance_m: 1.0,
            focal_mm: 30.0,
        },
        appearance_tag: tag.to_string(),
        steps: (0..2)
            .map(|i| TimeStep {
                time_index: i,
                ee_pose: Pose {
                    position: [0.0; 3],
                    orientation: Quat::IDENTITY,
                },
                gripper: 1.0,
                action: None,
                object_keypoints: vec![],
            })
            .collect(),
    }
}

fn tag_pool(bin_sizes: &[usize]) -> Pool {
    let mut trajs = Vec::new();
    for (bin, &size) in bin_sizes.iter().enumerate() {
        for i in 0..size {
            trajs.push(tagged_trajectory(&format!("b{bin}_i{i:03}"), &format!("tag{bin}")));
        }
    }
    Pool::new("pool", PoolRole::SourceUnpaired, trajs)
}

proptest! {
    #[test]
    fn selections_are_duplicate_free_and_sized(
        sizes in prop::collection::vec(1usize..12, 1..6),
        budget in 1usize..40,
        seed in 0u64..1000,
    ) {
        let pool = tag_pool(&sizes);
        let spec = BinSpec::Appearance;
        let diverse = select_diverse(&pool, &spec, budget, seed).unwrap();
        let target = tag_pool(&sizes[..1]);
        let targeted = select_targeted(&pool, &target, &spec, budget, seed).unwrap();
        for report in [&diverse, &targeted] {
            let unique: std::collections::BTreeSet<_> = report.selected_ids.iter().collect();
            prop_assert_eq!(unique.len(), report.selected_ids.len());
            prop_assert_eq!(report.selected_ids.len(), budget.min(pool.len()));
            for id in &report.selected_ids {
                prop_assert!(pool.get(id).is_some());
            }
        }
        // Same seed, same selection.
        let again = select_diverse(&pool, &spec, budget, seed).unwrap();
        prop_assert_eq!(again.selected_ids, diverse.selected_ids);
    }

    #[test]
    fn bin_keys_are_deterministic(az in 0.0f64..360.0, el in -90.0f64..=90.0, focal in 1.0f64..100.0) {
        let t = {
            let mut t = tagged_trajectory("t", "tag");
            t.camera.azimuth_deg = az;
            t.camera.elevation_deg = el;
            t.camera.focal_mm = focal;
            t
        };
        let spec = BinSpec::default_viewpoint();
        prop_assert_eq!(bin_of(&t, &spec), bin_of(&t, &spec));
    }

    #[test]
    fn trajectory_records_roundtrip_every_field_bitwise(
        positions in prop::collection::vec(prop::array::uniform3(prop::num::f64::NORMAL), 2..6),
        grippers in prop::collection::vec(0.0f64..=1.0, 2..6),
        quat in prop::array::uniform4(prop::num::f64::NORMAL),
        camera in prop::array::uniform4(prop::num::f64::NORMAL),
        scale in prop::num::f64::NORMAL,
    ) {
        // Serialization fidelity over arbitrary finite doubles; records
        // are not validated here, only round-tripped.
        let n = positions.len().min(grippers.len());
        let t = Trajectory {
            trajectory_id: "prop".to_string(),
            embodiment: EmbodimentDescriptor {
                embodiment_id: "emb".to_string(),
                platform_class: "p".to_string(),
                gripper_class: "g".to_string(),
                kinematic_scale: scale,
                gripper_aperture_range: None,
            },
            task_id: "task".to_string(),
            task_prompt: "quoted \"text\" and \\ escapes".to_string(),
            scene_id: "s".to_string(),
            camera: CameraSpec {
                azimuth_deg: camera[0],
                elevation_deg: camera[1],
                distance_m: camera[2],
                focal_mm: camera[3],
            },
            appearance_tag: "tag".to_string(),
            steps: (0..n)
                .map(|i| TimeStep {
                    time_index: i as u64,
                    ee_pose: Pose {
                        position: positions[i],
                        orientation: Quat(quat),
                    },
                    gripper: grippers[i],
                    action: Some(vec![positions[i][0], positions[i][1]]),
                    object_keypoints: vec![("kp".to_string(), positions[i])],
                })
                .collect(),
        };
        let line = record_line(TRAJECTORY_SCHEMA, &t);
        let back: Trajectory = parse_record(&line, TRAJECTORY_SCHEMA)
            .expect("round-trip parses");
        prop_assert_eq!(&back, &t);
        // Re-serialization is also byte-stable.
        prop_assert_eq!(record_line(TRAJECTORY_SCHEMA, &back), line);
    }

    #[test]
    fn flatten_weights_sum_to_one_with_equal_bin_masses(
        sizes in prop::collection::vec(1usize..20, 1..8),
    ) {
        let pool = tag_pool(&sizes);
        let spec = BinSpec::Appearance;
        let weights = flatten_weights(&pool, &[spec]).unwrap();
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);

        let h = histogram(&pool, &spec);
        let expected = 1.0 / h.counts.len() as f64;
        let mut mass: std::collections::BTreeMap<String, f64> = Default::default();
        for (id, w) in &weights {
            let bin = id.split('_').next().unwrap().to_string();
            *mass.entry(bin).or_insert(0.0) += w;
        }
        for (_, m) in mass {
            prop_assert!((m - expected).abs() < 1e-9);
        }
    }
}
