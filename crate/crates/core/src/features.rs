//! Task-space feature extraction.
//!
//! Each trajectory is reduced to a per-step feature of end-effector
//! position, orientation, gripper fraction, and an object-centric
//! progress scalar (distance from the end-effector to the nearest
//! task-relevant keypoint). A task event keypoint — the first stable
//! grasp — anchors alignment; tracks are sliced to the approach segment
//! and resampled to a fixed length before any distance computation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Quat, Vec3};
use crate::trajectory::{TaskKeypointMap, TimeStep, Trajectory};

/// One step of the task-space feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStep {
    /// End-effector position (meters).
    pub position: Vec3,
    /// End-effector orientation.
    pub orientation: Quat,
    /// Gripper aperture fraction in [0, 1].
    pub gripper: f64,
    /// Distance to the nearest task-relevant keypoint (meters).
    pub progress: f64,
}

/// A trajectory's feature track with an optional event keypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrack {
    pub trajectory_id: String,
    pub steps: Vec<FeatureStep>,
    /// Index of the event keypoint (first stable grasp), when detected.
    pub event_index: Option<usize>,
}

impl FeatureTrack {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Parameters that make "first stable grasp" operational.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    /// Gripper fraction at or below which the gripper counts as closed.
    pub close_threshold: f64,
    /// Number of consecutive closed steps required for a stable grasp.
    pub hold_steps: usize,
    /// Maximum progress-scalar distance (meters) at the grasp step.
    pub proximity_m: f64,
}

impl Default for EventParams {
    fn default() -> Self {
        EventParams {
            close_threshold: 0.2,
            hold_steps: 5,
            proximity_m: 0.05,
        }
    }
}

/// Fixed resample length used throughout pairing.
pub const DEFAULT_RESAMPLE_LEN: usize = 50;

/// Distance from the end-effector to the nearest task-relevant keypoint.
///
/// Positions are compared in the frame anchored at the keypoint's initial
/// position, which reduces to the Euclidean distance between the current
/// end-effector and keypoint positions.
pub fn progress_scalar(
    step: &TimeStep,
    task_keypoint_ids: &std::collections::BTreeSet<String>,
    trajectory_id: &str,
    step_index: usize,
) -> Result<f64> {
    let best = step
        .object_keypoints
        .iter()
        .filter(|(id, _)| task_keypoint_ids.contains(id))
        .map(|(_, p)| geom::dist(step.ee_pose.position, *p))
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.min(d)))
        });
    best.ok_or_else(|| Error::MissingKeypoint {
        trajectory_id: trajectory_id.to_string(),
        step: step_index,
    })
}

/// Find the first stable grasp: the first index `i` where the gripper is
/// at or below the close threshold for `hold_steps` consecutive steps
/// and the progress scalar at `i` is within the proximity radius.
///
/// Returns `None` when no such index exists; callers fall back to
/// full-trajectory alignment.
pub fn detect_event_keypoint(
    t: &Trajectory,
    task_keypoint_ids: &std::collections::BTreeSet<String>,
    params: &EventParams,
) -> Result<Option<usize>> {
    let n = t.steps.len();
    let k = params.hold_steps.max(1);
    if n < k {
        return Ok(None);
    }
    for i in 0..=(n - k) {
        let held = t.steps[i..i + k]
            .iter()
            .all(|s| s.gripper <= params.close_threshold);
        if !held {
            continue;
        }
        let prog = progress_scalar(&t.steps[i], task_keypoint_ids, &t.trajectory_id, i)?;
        if prog <= params.proximity_m {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Compute the full feature track for a trajectory.
pub fn extract_features(
    t: &Trajectory,
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
) -> Result<FeatureTrack> {
    let ids = t.task_relevant_keypoints(tasks);
    let mut steps = Vec::with_capacity(t.steps.len());
    for (i, s) in t.steps.iter().enumerate() {
        steps.push(FeatureStep {
            position: s.ee_pose.position,
            orientation: s.ee_pose.orientation,
            gripper: s.gripper,
            progress: progress_scalar(s, &ids, &t.trajectory_id, i)?,
        });
    }
    let event_index = detect_event_keypoint(t, &ids, params)?;
    Ok(FeatureTrack {
        trajectory_id: t.trajectory_id.clone(),
        steps,
        event_index,
    })
}

/// Slice a track to its approach segment: start through the event
/// keypoint, inclusive. Tracks without an event pass through whole.
/// The output's event index is its last step (or `None`).
pub fn approach_segment(ft: &FeatureTrack) -> FeatureTrack {
    match ft.event_index {
        Some(e) => {
            let end = e.min(ft.steps.len().saturating_sub(1));
            FeatureTrack {
                trajectory_id: ft.trajectory_id.clone(),
                steps: ft.steps[..=end].to_vec(),
                event_index: Some(end),
            }
        }
        None => ft.clone(),
    }
}

/// Resample a track to exactly `target_len` steps.
///
/// Scalar channels are linearly interpolated at uniformly spaced
/// fractional indices; orientations are spherically interpolated along
/// the shorter arc. The first and last input steps are preserved
/// bit-for-bit, as is any step landing on a whole index, so resampling
/// at the input length is the identity. The event index is remapped by
/// rounding its fractional position.
pub fn resample(ft: &FeatureTrack, target_len: usize) -> Result<FeatureTrack> {
    let n = ft.steps.len();
    if n < 2 {
        return Err(Error::TrackTooShort {
            trajectory_id: ft.trajectory_id.clone(),
            len: n,
        });
    }
    if target_len < 2 {
        return Err(Error::TrackTooShort {
            trajectory_id: ft.trajectory_id.clone(),
            len: target_len,
        });
    }

    let span = (n - 1) as f64;
    let out_span = (target_len - 1) as f64;
    let mut steps = Vec::with_capacity(target_len);
    for k in 0..target_len {
        if k == 0 {
            steps.push(ft.steps[0].clone());
            continue;
        }
        if k == target_len - 1 {
            steps.push(ft.steps[n - 1].clone());
            continue;
        }
        let pos = k as f64 * span / out_span;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 {
            steps.push(ft.steps[lo].clone());
            continue;
        }
        let a = &ft.steps[lo];
        let b = &ft.steps[lo + 1];
        steps.push(FeatureStep {
            position: geom::lerp(a.position, b.position, frac),
            orientation: a.orientation.slerp(&b.orientation, frac),
            gripper: a.gripper + (b.gripper - a.gripper) * frac,
            progress: a.progress + (b.progress - a.progress) * frac,
        });
    }

    let event_index = ft.event_index.map(|e| {
        let mapped = (e as f64 * out_span / span).round() as usize;
        mapped.min(target_len - 1)
    });

    Ok(FeatureTrack {
        trajectory_id: ft.trajectory_id.clone(),
        steps,
        event_index,
    })
}

/// Extract, optionally slice to the approach segment, and resample.
///
/// Tracks shorter than 2 steps after slicing (an event at index 0) are
/// passed through unresampled.
pub fn prepare_track(
    t: &Trajectory,
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
    approach_only: bool,
    target_len: usize,
) -> Result<FeatureTrack> {
    let full = extract_features(t, tasks, params)?;
    let segment = if approach_only {
        approach_segment(&full)
    } else {
        full
    };
    if segment.len() < 2 {
        return Ok(segment);
    }
    resample(&segment, target_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{CameraSpec, EmbodimentDescriptor, Pose};
    use std::collections::BTreeSet;

    fn ids(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn step_at(i: u64, ee: Vec3, gripper: f64, keypoints: &[(&str, Vec3)]) -> TimeStep {
        TimeStep {
            time_index: i,
            ee_pose: Pose {
                position: ee,
                orientation: Quat::IDENTITY,
            },
            gripper,
            action: None,
            object_keypoints: keypoints
                .iter()
                .map(|(id, p)| (id.to_string(), *p))
                .collect(),
        }
    }

    fn trajectory_with_steps(steps: Vec<TimeStep>) -> Trajectory {
        Trajectory {
            trajectory_id: "t0".to_string(),
            embodiment: EmbodimentDescriptor {
                embodiment_id: "emb".to_string(),
                platform_class: "franka".to_string(),
                gripper_class: "parallel_85".to_string(),
                kinematic_scale: 1.0,
                gripper_aperture_range: None,
            },
            task_id: "pick_place".to_string(),
            task_prompt: "pick".to_string(),
            scene_id: "s0".to_string(),
            camera: CameraSpec {
                azimuth_deg: 0.0,
                elevation_deg: 0.0,
                distance_m: 1.0,
                focal_mm: 35.0,
            },
            appearance_tag: "default".to_string(),
            steps,
        }
    }

    fn track(values: &[f64], event: Option<usize>) -> FeatureTrack {
        FeatureTrack {
            trajectory_id: "ft".to_string(),
            steps: values
                .iter()
                .map(|&v| FeatureStep {
                    position: [v, 0.0, 0.0],
                    orientation: Quat::IDENTITY,
                    gripper: 1.0,
                    progress: 0.0,
                })
                .collect(),
            event_index: event,
        }
    }

    #[test]
    fn progress_is_euclidean_distance() {
        let s = step_at(0, [0.0, 0.0, 0.0], 1.0, &[("obj", [0.0, 3.0, 4.0])]);
        let d = progress_scalar(&s, &ids(&["obj"]), "t", 0).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn progress_zero_when_coincident() {
        let s = step_at(0, [0.2, 0.3, 0.4], 1.0, &[("obj", [0.2, 0.3, 0.4])]);
        assert_eq!(progress_scalar(&s, &ids(&["obj"]), "t", 0).unwrap(), 0.0);
    }

    #[test]
    fn progress_takes_minimum_over_keypoints() {
        let s = step_at(
            0,
            [0.0, 0.0, 0.0],
            1.0,
            &[("a", [2.0, 0.0, 0.0]), ("b", [7.0, 0.0, 0.0])],
        );
        assert_eq!(progress_scalar(&s, &ids(&["a", "b"]), "t", 0).unwrap(), 2.0);
    }

    #[test]
    fn progress_ignores_irrelevant_keypoints() {
        let s = step_at(
            0,
            [0.0, 0.0, 0.0],
            1.0,
            &[("a", [2.0, 0.0, 0.0]), ("b", [7.0, 0.0, 0.0])],
        );
        assert_eq!(progress_scalar(&s, &ids(&["b"]), "t", 0).unwrap(), 7.0);
        let err = progress_scalar(&s, &ids(&["c"]), "t", 0).unwrap_err();
        assert!(err.to_string().contains("step 0"));
    }

    #[test]
    fn progress_invariant_under_joint_translation() {
        let offset = [1.5, -2.0, 0.25];
        let s = step_at(0, [0.1, 0.2, 0.3], 1.0, &[("obj", [0.5, 0.0, 0.1])]);
        let shifted = step_at(
            0,
            geom::add([0.1, 0.2, 0.3], offset),
            1.0,
            &[("obj", geom::add([0.5, 0.0, 0.1], offset))],
        );
        let a = progress_scalar(&s, &ids(&["obj"]), "t", 0).unwrap();
        let b = progress_scalar(&shifted, &ids(&["obj"]), "t", 0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn grasp_trajectory(grippers: &[f64]) -> Trajectory {
        // Keypoint coincident with the end-effector so proximity always holds.
        let steps = grippers
            .iter()
            .enumerate()
            .map(|(i, &g)| step_at(i as u64, [0.0, 0.0, 0.0], g, &[("obj", [0.0, 0.0, 0.0])]))
            .collect();
        trajectory_with_steps(steps)
    }

    #[test]
    fn first_sustained_close_is_detected() {
        let t = grasp_trajectory(&[1.0, 1.0, 0.1, 0.1, 0.1, 0.1, 0.1]);
        let params = EventParams {
            close_threshold: 0.2,
            hold_steps: 4,
            proximity_m: 0.05,
        };
        let e = detect_event_keypoint(&t, &ids(&["obj"]), &params).unwrap();
        assert_eq!(e, Some(2));
    }

    #[test]
    fn no_event_when_gripper_never_closes() {
        let t = grasp_trajectory(&[1.0; 10]);
        let e = detect_event_keypoint(&t, &ids(&["obj"]), &EventParams::default()).unwrap();
        assert_eq!(e, None);
    }

    #[test]
    fn short_dip_does_not_count_as_grasp() {
        // Dips below threshold for K-1 = 3 steps at index 3, reopens,
        // then closes for K steps starting at index 9.
        let mut g = vec![1.0; 14];
        g[3..6].fill(0.1);
        g[9..13].fill(0.1);
        let t = grasp_trajectory(&g);
        let params = EventParams {
            close_threshold: 0.2,
            hold_steps: 4,
            proximity_m: 0.05,
        };
        let e = detect_event_keypoint(&t, &ids(&["obj"]), &params).unwrap();
        assert_eq!(e, Some(9));
    }

    #[test]
    fn proximity_gate_delays_detection() {
        // Gripper closed from step 0, but the end-effector only reaches
        // the keypoint at step 3.
        let steps = vec![
            step_at(0, [1.0, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
            step_at(1, [0.5, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
            step_at(2, [0.2, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
            step_at(3, [0.0, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
            step_at(4, [0.0, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
            step_at(5, [0.0, 0.0, 0.0], 0.1, &[("obj", [0.0, 0.0, 0.0])]),
        ];
        let t = trajectory_with_steps(steps);
        let params = EventParams {
            close_threshold: 0.2,
            hold_steps: 3,
            proximity_m: 0.05,
        };
        let e = detect_event_keypoint(&t, &ids(&["obj"]), &params).unwrap();
        assert_eq!(e, Some(3));
    }

    #[test]
    fn extract_preserves_length_and_event() {
        let mut g = vec![1.0; 10];
        g[6..10].fill(0.1);
        let t = grasp_trajectory(&g);
        let params = EventParams {
            close_threshold: 0.2,
            hold_steps: 4,
            proximity_m: 0.05,
        };
        let ft = extract_features(&t, None, &params).unwrap();
        assert_eq!(ft.len(), 10);
        assert_eq!(ft.event_index, Some(6));
    }

    #[test]
    fn static_trajectory_has_constant_progress() {
        let steps = (0..8)
            .map(|i| step_at(i, [0.3, 0.0, 0.0], 1.0, &[("obj", [0.0, 0.0, 0.0])]))
            .collect();
        let t = trajectory_with_steps(steps);
        let ft = extract_features(&t, None, &EventParams::default()).unwrap();
        assert!(ft.steps.iter().all(|s| s.progress == ft.steps[0].progress));
    }

    #[test]
    fn approach_segment_slices_inclusive_prefix() {
        let ft = track(&(0..20).map(|i| i as f64).collect::<Vec<_>>(), Some(7));
        let seg = approach_segment(&ft);
        assert_eq!(seg.len(), 8);
        assert_eq!(seg.event_index, Some(7));
        assert_eq!(seg.steps[7], ft.steps[7]);
    }

    #[test]
    fn approach_segment_without_event_is_identity() {
        let ft = track(&[0.0, 1.0, 2.0], None);
        assert_eq!(approach_segment(&ft), ft);
    }

    #[test]
    fn approach_segment_event_at_zero_is_single_step() {
        let ft = track(&[5.0, 6.0, 7.0], Some(0));
        let seg = approach_segment(&ft);
        assert_eq!(seg.len(), 1);
        assert_eq!(seg.event_index, Some(0));
    }

    #[test]
    fn resample_preserves_endpoints_exactly() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let ft = track(&values, Some(60));
        let out = resample(&ft, 50).unwrap();
        assert_eq!(out.len(), 50);
        assert_eq!(out.steps[0], ft.steps[0]);
        assert_eq!(out.steps[49], ft.steps[99]);
        // Event at 60/99 of the way maps to round(60 * 49 / 99) = 30.
        assert_eq!(out.event_index, Some(30));
    }

    #[test]
    fn resample_at_input_length_is_identity() {
        let values: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).cos()).collect();
        let ft = track(&values, Some(12));
        let out = resample(&ft, 50).unwrap();
        assert_eq!(out, ft);
    }

    #[test]
    fn resample_linear_track_hits_analytic_midpoint() {
        // 11 steps from (0,0,0) to (1,0,0); resampled to 3 the midpoint
        // lands exactly on step 5 = (0.5, 0, 0).
        let values: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let ft = track(&values, None);
        let out = resample(&ft, 3).unwrap();
        assert_eq!(out.steps[0].position, [0.0, 0.0, 0.0]);
        assert_eq!(out.steps[1].position, [0.5, 0.0, 0.0]);
        assert_eq!(out.steps[2].position, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn resample_constant_track_stays_constant() {
        let ft = track(&[0.7; 13], None);
        let out = resample(&ft, 29).unwrap();
        assert!(out.steps.iter().all(|s| s.position == [0.7, 0.0, 0.0]));
        assert!(out.steps.iter().all(|s| s.gripper == 1.0));
    }

    #[test]
    fn resample_rejects_degenerate_tracks() {
        let ft = track(&[1.0], None);
        assert!(resample(&ft, 50).is_err());
    }

    #[test]
    fn resample_interpolates_orientation_on_shorter_arc() {
        let mut ft = track(&[0.0, 1.0], None);
        ft.steps[1].orientation =
            Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let out = resample(&ft, 3).unwrap();
        let expect = Quat::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_4);
        assert!(out.steps[1].orientation.geodesic_angle(&expect) < 1e-12);
    }
}
