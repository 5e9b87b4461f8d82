//! Core domain types: demonstrations, embodiments, pools, and validation.
//!
//! A [`Trajectory`] is one demonstration: embodiment, task, scene, and
//! camera metadata plus a time series of end-effector pose, gripper
//! state, optional actions, and object keypoints. Pools group
//! trajectories by role and are immutable after ingestion; everything
//! downstream reads them concurrently without coordination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Quat, Vec3};

/// Unit-quaternion norm tolerance for validation.
pub const QUAT_NORM_TOL: f64 = 1e-6;

/// End-effector pose: position in meters, orientation as a unit quaternion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

/// One timestep of a demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub time_index: u64,
    pub ee_pose: Pose,
    /// Gripper aperture fraction in [0, 1]; 0 = fully closed.
    pub gripper: f64,
    /// Optional joint commands (radians or radians/sec).
    pub action: Option<Vec<f64>>,
    /// Tracked object keypoints as (keypoint_id, position) pairs.
    pub object_keypoints: Vec<(String, Vec3)>,
}

/// Static description of a robot embodiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbodimentDescriptor {
    pub embodiment_id: String,
    pub platform_class: String,
    pub gripper_class: String,
    /// Dimensionless scale relating this embodiment's workspace to the
    /// nominal one. Must be positive.
    pub kinematic_scale: f64,
    /// Raw aperture range (min, max) used to normalize gripper values on
    /// ingest. `None` means values are already normalized to [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper_aperture_range: Option<(f64, f64)>,
}

/// Third-person camera parameters. Wire names drop the unit suffixes
/// (`azimuth`, `elevation`, `distance`, `focal_length`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Degrees in [0, 360).
    #[serde(rename = "azimuth")]
    pub azimuth_deg: f64,
    /// Degrees in [-90, 90].
    #[serde(rename = "elevation")]
    pub elevation_deg: f64,
    /// Meters, > 0.
    #[serde(rename = "distance")]
    pub distance_m: f64,
    /// Millimeters, > 0.
    #[serde(rename = "focal_length")]
    pub focal_mm: f64,
}

/// One demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub embodiment: EmbodimentDescriptor,
    pub task_id: String,
    pub task_prompt: String,
    pub scene_id: String,
    pub camera: CameraSpec,
    /// Stand-in label for scene/robot appearance variation.
    pub appearance_tag: String,
    pub steps: Vec<TimeStep>,
}

/// Which keypoint ids count as task-relevant, per task id.
pub type TaskKeypointMap = BTreeMap<String, BTreeSet<String>>;

impl Trajectory {
    /// The keypoint ids considered task-relevant for this trajectory.
    ///
    /// Falls back to every keypoint id observed in the trajectory when
    /// the task declares nothing.
    pub fn task_relevant_keypoints(&self, map: Option<&TaskKeypointMap>) -> BTreeSet<String> {
        if let Some(ids) = map.and_then(|m| m.get(&self.task_id)) {
            return ids.clone();
        }
        self.steps
            .iter()
            .flat_map(|s| s.object_keypoints.iter().map(|(id, _)| id.clone()))
            .collect()
    }
}

/// Role of a pool in the curation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRole {
    TargetFewShot,
    SourcePairedCandidates,
    SourceUnpaired,
}

impl fmt::Display for PoolRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PoolRole::TargetFewShot => "target_few_shot",
            PoolRole::SourcePairedCandidates => "source_paired_candidates",
            PoolRole::SourceUnpaired => "source_unpaired",
        };
        f.write_str(s)
    }
}

/// An immutable collection of trajectories with a pipeline role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub pool_id: String,
    pub role: PoolRole,
    pub trajectories: Vec<Trajectory>,
}

impl Pool {
    pub fn new(pool_id: impl Into<String>, role: PoolRole, trajectories: Vec<Trajectory>) -> Self {
        Pool {
            pool_id: pool_id.into(),
            role,
            trajectories,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.trajectories
            .iter()
            .map(|t| t.trajectory_id.clone())
            .collect()
    }

    pub fn get(&self, trajectory_id: &str) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|t| t.trajectory_id == trajectory_id)
    }

    /// Id-to-trajectory map for bulk lookups; build once per pass
    /// instead of repeating linear scans.
    pub fn index_by_id(&self) -> BTreeMap<&str, &Trajectory> {
        self.trajectories
            .iter()
            .map(|t| (t.trajectory_id.as_str(), t))
            .collect()
    }

    /// Pool-level invariant check: unique trajectory ids, consistent
    /// embodiment descriptors per id, and a single embodiment for
    /// target few-shot pools.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for t in &self.trajectories {
            if !seen.insert(t.trajectory_id.as_str()) {
                out.push(Violation::pool(
                    "trajectory_id",
                    format!("duplicate trajectory_id '{}'", t.trajectory_id),
                ));
            }
        }
        let mut descriptors: BTreeMap<&str, &EmbodimentDescriptor> = BTreeMap::new();
        for t in &self.trajectories {
            match descriptors.get(t.embodiment.embodiment_id.as_str()) {
                Some(existing) if **existing != t.embodiment => {
                    out.push(Violation::pool(
                        "embodiment",
                        format!(
                            "embodiment_id '{}' bound to conflicting descriptors",
                            t.embodiment.embodiment_id
                        ),
                    ));
                }
                None => {
                    descriptors.insert(&t.embodiment.embodiment_id, &t.embodiment);
                }
                _ => {}
            }
        }
        if self.role == PoolRole::TargetFewShot && descriptors.len() > 1 {
            out.push(Violation::pool(
                "role",
                format!(
                    "target_few_shot pool contains {} embodiments, expected exactly 1",
                    descriptors.len()
                ),
            ));
        }
        out
    }
}

/// One violated invariant, naming the field and the rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    /// Step index for per-step violations, absent for trajectory-level ones.
    pub step: Option<usize>,
    pub rule: String,
}

impl Violation {
    fn at(field: &str, step: usize, rule: impl Into<String>) -> Self {
        Violation {
            field: field.to_string(),
            step: Some(step),
            rule: rule.into(),
        }
    }

    fn on(field: &str, rule: impl Into<String>) -> Self {
        Violation {
            field: field.to_string(),
            step: None,
            rule: rule.into(),
        }
    }

    fn pool(field: &str, rule: impl Into<String>) -> Self {
        Violation::on(field, rule)
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(s) => write!(f, "{} (step {}): {}", self.field, s, self.rule),
            None => write!(f, "{}: {}", self.field, self.rule),
        }
    }
}

/// Check every type invariant on a trajectory.
///
/// Returns an empty report iff all invariants hold. Violations are data,
/// not failures: ingestion uses them to skip bad records with a
/// diagnostic instead of aborting.
pub fn validate_trajectory(t: &Trajectory, tasks: Option<&TaskKeypointMap>) -> Vec<Violation> {
    let mut out = Vec::new();

    if t.steps.len() < 2 {
        out.push(Violation::on(
            "steps",
            format!("trajectory has {} steps, at least 2 required", t.steps.len()),
        ));
    }
    for (i, w) in t.steps.windows(2).enumerate() {
        if w[1].time_index <= w[0].time_index {
            out.push(Violation::at(
                "time_index",
                i + 1,
                format!(
                    "not strictly increasing ({} after {})",
                    w[1].time_index, w[0].time_index
                ),
            ));
        }
    }

    if !t.embodiment.kinematic_scale.is_finite() || t.embodiment.kinematic_scale <= 0.0 {
        out.push(Violation::on(
            "embodiment.kinematic_scale",
            format!("must be > 0, got {}", t.embodiment.kinematic_scale),
        ));
    }

    let cam = &t.camera;
    if !(0.0..360.0).contains(&cam.azimuth_deg) || !cam.azimuth_deg.is_finite() {
        out.push(Violation::on(
            "camera.azimuth",
            format!("must be in [0, 360), got {}", cam.azimuth_deg),
        ));
    }
    if !(-90.0..=90.0).contains(&cam.elevation_deg) || !cam.elevation_deg.is_finite() {
        out.push(Violation::on(
            "camera.elevation",
            format!("must be in [-90, 90], got {}", cam.elevation_deg),
        ));
    }
    if !cam.distance_m.is_finite() || cam.distance_m <= 0.0 {
        out.push(Violation::on(
            "camera.distance",
            format!("must be > 0, got {}", cam.distance_m),
        ));
    }
    if !cam.focal_mm.is_finite() || cam.focal_mm <= 0.0 {
        out.push(Violation::on(
            "camera.focal_length",
            format!("must be > 0, got {}", cam.focal_mm),
        ));
    }

    let relevant = t.task_relevant_keypoints(tasks);
    let declares_objects = tasks
        .map(|m| m.get(&t.task_id).is_some_and(|ids| !ids.is_empty()))
        .unwrap_or(false);

    for (i, step) in t.steps.iter().enumerate() {
        if !geom::is_finite(step.ee_pose.position) {
            out.push(Violation::at("ee_pose.position", i, "non-finite component"));
        }
        let q = &step.ee_pose.orientation;
        if !q.is_finite() {
            out.push(Violation::at(
                "ee_pose.orientation",
                i,
                "non-finite component",
            ));
        } else if (q.norm() - 1.0).abs() > QUAT_NORM_TOL {
            out.push(Violation::at(
                "ee_pose.orientation",
                i,
                format!("quaternion norm {} outside 1 +/- {}", q.norm(), QUAT_NORM_TOL),
            ));
        }
        if !step.gripper.is_finite() || !(0.0..=1.0).contains(&step.gripper) {
            out.push(Violation::at(
                "gripper",
                i,
                format!("must be in [0, 1], got {}", step.gripper),
            ));
        }
        if let Some(a) = &step.action {
            if a.iter().any(|v| !v.is_finite()) {
                out.push(Violation::at("action", i, "non-finite component"));
            }
        }
        for (id, p) in &step.object_keypoints {
            if !geom::is_finite(*p) {
                out.push(Violation::at(
                    "object_keypoints",
                    i,
                    format!("keypoint '{id}' has non-finite component"),
                ));
            }
        }
        if declares_objects
            && !step
                .object_keypoints
                .iter()
                .any(|(id, _)| relevant.contains(id))
        {
            out.push(Violation::at(
                "object_keypoints",
                i,
                "no task-relevant keypoint present",
            ));
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_embodiment(id: &str) -> EmbodimentDescriptor {
        EmbodimentDescriptor {
            embodiment_id: id.to_string(),
            platform_class: "franka".to_string(),
            gripper_class: "parallel_85".to_string(),
            kinematic_scale: 1.0,
            gripper_aperture_range: None,
        }
    }

    pub(crate) fn test_camera() -> CameraSpec {
        CameraSpec {
            azimuth_deg: 45.0,
            elevation_deg: 20.0,
            distance_m: 1.2,
            focal_mm: 35.0,
        }
    }

    fn step(i: u64, gripper: f64) -> TimeStep {
        TimeStep {
            time_index: i,
            ee_pose: Pose {
                position: [0.1 * i as f64, 0.0, 0.2],
                orientation: Quat::IDENTITY,
            },
            gripper,
            action: None,
            object_keypoints: vec![("obj".to_string(), [0.5, 0.0, 0.1])],
        }
    }

    fn valid_trajectory(id: &str) -> Trajectory {
        Trajectory {
            trajectory_id: id.to_string(),
            embodiment: test_embodiment("emb_a"),
            task_id: "pick_place".to_string(),
            task_prompt: "pick up the object".to_string(),
            scene_id: "scene_0".to_string(),
            camera: test_camera(),
            appearance_tag: "default".to_string(),
            steps: (0..8).map(|i| step(i, 1.0)).collect(),
        }
    }

    #[test]
    fn identity_quaternion_everywhere_is_valid() {
        let t = valid_trajectory("t0");
        assert!(validate_trajectory(&t, None).is_empty());
    }

    #[test]
    fn out_of_range_gripper_names_step_and_field() {
        let mut t = valid_trajectory("t0");
        t.steps[4].gripper = 1.3;
        let report = validate_trajectory(&t, None);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "gripper");
        assert_eq!(report[0].step, Some(4));
    }

    #[test]
    fn non_increasing_time_index_flagged_once() {
        let mut t = valid_trajectory("t0");
        t.steps.truncate(4);
        t.steps[0].time_index = 0;
        t.steps[1].time_index = 1;
        t.steps[2].time_index = 1;
        t.steps[3].time_index = 2;
        let report = validate_trajectory(&t, None);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "time_index");
        assert_eq!(report[0].step, Some(2));
    }

    #[test]
    fn missing_task_keypoint_flagged_when_declared() {
        let mut t = valid_trajectory("t0");
        t.steps[3].object_keypoints.clear();
        let mut tasks = TaskKeypointMap::new();
        tasks.insert(
            "pick_place".to_string(),
            ["obj".to_string()].into_iter().collect(),
        );
        let report = validate_trajectory(&t, Some(&tasks));
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].field, "object_keypoints");
        assert_eq!(report[0].step, Some(3));
        // Without a declaration the empty step passes.
        assert!(validate_trajectory(&t, None).is_empty());
    }

    #[test]
    fn bad_quaternion_and_camera_flagged() {
        let mut t = valid_trajectory("t0");
        t.steps[1].ee_pose.orientation = Quat::new(1.0, 0.1, 0.0, 0.0);
        t.camera.azimuth_deg = 360.0;
        let report = validate_trajectory(&t, None);
        assert_eq!(report.len(), 2);
        assert!(report.iter().any(|v| v.field == "ee_pose.orientation"));
        assert!(report.iter().any(|v| v.field == "camera.azimuth"));
    }

    #[test]
    fn pool_validation_catches_duplicates_and_mixed_targets() {
        let mut a = valid_trajectory("t0");
        let b = valid_trajectory("t0");
        let pool = Pool::new("p", PoolRole::SourceUnpaired, vec![a.clone(), b]);
        let v = pool.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("duplicate"));

        a.trajectory_id = "t1".to_string();
        a.embodiment = test_embodiment("emb_b");
        let mixed = Pool::new(
            "p",
            PoolRole::TargetFewShot,
            vec![valid_trajectory("t0"), a],
        );
        let v = mixed.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("embodiments"));
    }
}
