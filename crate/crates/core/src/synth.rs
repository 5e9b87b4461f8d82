//! Procedural multi-embodiment trajectory generation with ground truth.
//!
//! Every algorithm in the crate is verifiable against worlds produced
//! here: pick-and-place base motions are rendered onto several
//! embodiments (scaled about the object, rigidly offset, gripper timing
//! shifted, position noise added), and the generator records which
//! target trajectory shares a base motion with which source trajectory.
//! Rendering is a pure function of (config, seed); independent
//! trajectories draw from sub-seeds split off the master seed, so the
//! result does not depend on render order.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{self, Quat, Vec3};
use crate::rng::{derive_seed, rng_from_seed, DetRng};
use crate::trajectory::{
    CameraSpec, EmbodimentDescriptor, Pool, PoolRole, Pose, TaskKeypointMap, TimeStep, Trajectory,
};

pub const SYNTH_TASK_ID: &str = "pick_place";
pub const SYNTH_KEYPOINT_ID: &str = "obj";

const OPEN: f64 = 1.0;
const CLOSED: f64 = 0.05;
const APPEARANCE_TAGS: [&str; 4] = ["default", "wood", "metal", "checker"];

/// One embodiment to render onto, with its deviation from the nominal
/// motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbodimentSpec {
    pub descriptor: EmbodimentDescriptor,
    /// Rigid translation of the end-effector path (meters).
    #[serde(default)]
    pub rigid_offset: Vec3,
    /// Shift of the gripper signal in steps (positive = later).
    #[serde(default)]
    pub gripper_timing_offset: i64,
}

/// Inclusive-low uniform ranges for camera placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraRanges {
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub distance_m: (f64, f64),
    pub focal_mm: (f64, f64),
}

impl Default for CameraRanges {
    fn default() -> Self {
        CameraRanges {
            azimuth_deg: (0.0, 360.0),
            elevation_deg: (-10.0, 60.0),
            distance_m: (0.8, 1.6),
            focal_mm: (20.0, 60.0),
        }
    }
}

/// Generator configuration. The first embodiment is the target; the
/// rest are sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Base motions rendered on the target and one source each.
    pub num_base_motions: usize,
    /// Extra base motions rendered only on source embodiments.
    pub num_unpaired_motions: usize,
    pub embodiments: Vec<EmbodimentSpec>,
    pub cameras_per_scene: usize,
    pub camera: CameraRanges,
    /// Per-step Gaussian position noise (meters).
    pub noise_sigma: f64,
    pub steps_per_trajectory: usize,
    pub seed: u64,
}

fn default_embodiments() -> Vec<EmbodimentSpec> {
    vec![
        EmbodimentSpec {
            descriptor: EmbodimentDescriptor {
                embodiment_id: "synth_target".to_string(),
                platform_class: "franka".to_string(),
                gripper_class: "parallel_85".to_string(),
                kinematic_scale: 1.0,
                gripper_aperture_range: None,
            },
            rigid_offset: [0.0, 0.0, 0.0],
            gripper_timing_offset: 0,
        },
        EmbodimentSpec {
            descriptor: EmbodimentDescriptor {
                embodiment_id: "synth_source".to_string(),
                platform_class: "ur5e".to_string(),
                gripper_class: "parallel_140".to_string(),
                kinematic_scale: 1.5,
                gripper_aperture_range: None,
            },
            rigid_offset: [0.0, 0.0, 0.0],
            gripper_timing_offset: 0,
        },
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_base_motions: 20,
            num_unpaired_motions: 20,
            embodiments: default_embodiments(),
            cameras_per_scene: 3,
            camera: CameraRanges::default(),
            noise_sigma: 0.01,
            steps_per_trajectory: 120,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_base_motions < 1 {
            return Err(Error::Config("num_base_motions must be >= 1".to_string()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Config("noise_sigma must be >= 0".to_string()));
        }
        if self.steps_per_trajectory < 10 {
            return Err(Error::Config(
                "steps_per_trajectory must be >= 10".to_string(),
            ));
        }
        if self.cameras_per_scene < 1 {
            return Err(Error::Config("cameras_per_scene must be >= 1".to_string()));
        }
        for spec in &self.embodiments {
            if !spec.descriptor.kinematic_scale.is_finite()
                || spec.descriptor.kinematic_scale <= 0.0
            {
                return Err(Error::Config(format!(
                    "embodiment '{}' must have kinematic_scale > 0",
                    spec.descriptor.embodiment_id
                )));
            }
        }
        let ranges = [
            self.camera.azimuth_deg,
            self.camera.elevation_deg,
            self.camera.distance_m,
            self.camera.focal_mm,
        ];
        if ranges.iter().any(|(lo, hi)| lo > hi) {
            return Err(Error::Config("camera ranges must have lo <= hi".to_string()));
        }
        Ok(())
    }
}

/// An object-centric pick-and-place template.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMotion {
    pub ee_positions: Vec<Vec3>,
    pub ee_orientations: Vec<Quat>,
    pub gripper: Vec<f64>,
    /// Object keypoint path: static until the grasp, co-moving with the
    /// end-effector through the place, static after release.
    pub keypoint: Vec<Vec3>,
    /// First step with the gripper closed at the object (ground truth
    /// for event detection).
    pub grasp_step: usize,
    pub release_step: usize,
    pub object_start: Vec3,
    pub goal: Vec3,
}

impl BaseMotion {
    pub fn len(&self) -> usize {
        self.ee_positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ee_positions.is_empty()
    }
}

/// Minimum-jerk interpolation factor on [0, 1].
fn min_jerk(u: f64) -> f64 {
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

fn uniform_in(rng: &mut DetRng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Generate one smooth pick-and-place base motion.
///
/// Phases: approach the object (minimum jerk), dwell while the gripper
/// closes, transport to the goal, release, retreat upward. The gripper
/// ramps shut over the two steps before `grasp_step` but only crosses
/// the close threshold at `grasp_step` itself, while the end-effector
/// is at the object, so event detection recovers `grasp_step` exactly
/// on noise-free renders.
pub fn generate_base_motion(seed: u64, steps: usize) -> Result<BaseMotion> {
    if steps < 10 {
        return Err(Error::Config(format!(
            "base motion needs >= 10 steps, got {steps}"
        )));
    }
    let mut rng = rng_from_seed(seed);

    let object_start: Vec3 = [
        rng.gen_range(-0.35..0.35),
        rng.gen_range(-0.35..0.35),
        rng.gen_range(0.01..0.05),
    ];
    // The end-effector starts a bounded distance (18-30 cm) from the
    // object, approaching from above. Bounding the approach span keeps
    // the cost of aligning scaled renders of the same motion well below
    // the cost of aligning different motions, whose object positions
    // spread across the whole workspace.
    let dir: Vec3 = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.5..1.2),
    ];
    let reach = rng.gen_range(0.18..0.30);
    let ee_start = geom::add(object_start, geom::scale(dir, reach / geom::norm(dir)));
    let goal: Vec3 = [
        rng.gen_range(-0.35..0.35),
        rng.gen_range(-0.35..0.35),
        rng.gen_range(0.01..0.10),
    ];
    let yaw_start = rng.gen_range(-1.0..1.0);
    let yaw_grasp = rng.gen_range(-1.0..1.0);

    // Phase boundaries as step indices.
    let arrive = (steps as f64 * 0.35).round() as usize;
    let arrive = arrive.clamp(3, steps - 7);
    let dwell = ((steps as f64 * 0.12).round() as usize).max(8);
    let transport_start = (arrive + dwell).min(steps - 4);
    let place = ((steps as f64 * 0.85).round() as usize).clamp(transport_start + 1, steps - 2);
    let grasp_step = arrive + 2;
    let release_step = (place + 1).min(steps - 1);

    let retreat_goal = geom::add(goal, [0.0, 0.0, 0.12]);
    // The gripper settles a couple of millimeters onto the object while
    // dwelling, so no two steps of a trajectory share the same state.
    let settled = geom::add(object_start, [0.0, 0.0, -0.002]);

    let mut ee_positions = Vec::with_capacity(steps);
    let mut ee_orientations = Vec::with_capacity(steps);
    let mut gripper = Vec::with_capacity(steps);
    for t in 0..steps {
        let pos = if t < arrive {
            let u = t as f64 / arrive as f64;
            geom::lerp(ee_start, object_start, min_jerk(u))
        } else if t < transport_start {
            let u = (t - arrive) as f64 / (transport_start - arrive) as f64;
            geom::lerp(object_start, settled, min_jerk(u))
        } else if t < place {
            let u = (t - transport_start) as f64 / (place - transport_start) as f64;
            geom::lerp(settled, goal, min_jerk(u))
        } else {
            let u = (t - place) as f64 / (steps - 1 - place).max(1) as f64;
            geom::lerp(goal, retreat_goal, min_jerk(u))
        };
        ee_positions.push(pos);

        let yaw = if t < arrive {
            let u = t as f64 / arrive as f64;
            yaw_start + (yaw_grasp - yaw_start) * min_jerk(u)
        } else {
            yaw_grasp
        };
        ee_orientations.push(Quat::from_axis_angle([0.0, 0.0, 1.0], yaw));

        // Closing ramp stays above the detection threshold until the
        // recorded grasp step; opens again at release.
        let g = if t + 2 == grasp_step {
            OPEN - (OPEN - CLOSED) / 3.0
        } else if t + 1 == grasp_step {
            OPEN - 2.0 * (OPEN - CLOSED) / 3.0
        } else if t >= grasp_step && t < release_step {
            CLOSED
        } else {
            OPEN
        };
        gripper.push(g);
    }

    let mut keypoint = Vec::with_capacity(steps);
    for t in 0..steps {
        let p = if t < grasp_step {
            object_start
        } else if t < release_step {
            ee_positions[t]
        } else {
            ee_positions[release_step]
        };
        keypoint.push(p);
    }

    Ok(BaseMotion {
        ee_positions,
        ee_orientations,
        gripper,
        keypoint,
        grasp_step,
        release_step,
        object_start,
        goal,
    })
}

/// Render a base motion onto an embodiment.
///
/// The end-effector path is scaled about the object start by the
/// embodiment's kinematic scale, shifted by its rigid offset, and
/// perturbed with per-step Gaussian noise; object keypoints inherit the
/// base object path plus noise of the same magnitude; the gripper
/// signal is shifted by the embodiment's timing offset.
#[allow(clippy::too_many_arguments)]
pub fn render_embodiment(
    base: &BaseMotion,
    spec: &EmbodimentSpec,
    camera: CameraSpec,
    trajectory_id: &str,
    scene_id: &str,
    appearance_tag: &str,
    noise_sigma: f64,
    seed: u64,
) -> Trajectory {
    let steps = base.len();
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma >= 0");
    let draw = |rng: &mut DetRng| -> Vec3 {
        if noise_sigma == 0.0 {
            [0.0, 0.0, 0.0]
        } else {
            [noise.sample(rng), noise.sample(rng), noise.sample(rng)]
        }
    };

    let scale = spec.descriptor.kinematic_scale;
    let mut out_steps = Vec::with_capacity(steps);
    for t in 0..steps {
        let nominal = if scale == 1.0 {
            base.ee_positions[t]
        } else {
            geom::add(
                base.object_start,
                geom::scale(geom::sub(base.ee_positions[t], base.object_start), scale),
            )
        };
        let ee = geom::add(geom::add(nominal, spec.rigid_offset), draw(&mut rng));
        let kp = geom::add(base.keypoint[t], draw(&mut rng));

        let shifted = t as i64 - spec.gripper_timing_offset;
        let g_idx = shifted.clamp(0, steps as i64 - 1) as usize;

        out_steps.push(TimeStep {
            time_index: t as u64,
            ee_pose: Pose {
                position: ee,
                orientation: base.ee_orientations[t],
            },
            gripper: base.gripper[g_idx],
            action: None,
            object_keypoints: vec![(SYNTH_KEYPOINT_ID.to_string(), kp)],
        });
    }

    Trajectory {
        trajectory_id: trajectory_id.to_string(),
        embodiment: spec.descriptor.clone(),
        task_id: SYNTH_TASK_ID.to_string(),
        task_prompt: "pick up the object and place it at the goal".to_string(),
        scene_id: scene_id.to_string(),
        camera,
        appearance_tag: appearance_tag.to_string(),
        steps: out_steps,
    }
}

/// A generated world: target few-shot pool, paired and unpaired source
/// pools, a held-out target pool (the same base motions re-rendered with
/// fresh noise and cameras), and the ground-truth pairing map.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub target: Pool,
    pub paired_sources: Pool,
    pub unpaired_sources: Pool,
    pub heldout_targets: Pool,
    /// target trajectory id -> source trajectory id sharing its base motion.
    pub gt_pairs: BTreeMap<String, String>,
    pub task_keypoints: TaskKeypointMap,
}

fn draw_camera(rng: &mut DetRng, ranges: &CameraRanges) -> CameraSpec {
    CameraSpec {
        azimuth_deg: uniform_in(rng, ranges.azimuth_deg),
        elevation_deg: uniform_in(rng, ranges.elevation_deg),
        distance_m: uniform_in(rng, ranges.distance_m),
        focal_mm: uniform_in(rng, ranges.focal_mm),
    }
}

struct SceneSetup {
    cameras: Vec<CameraSpec>,
    tag: String,
}

fn scene_setup(cfg: &SynthConfig, domain: &str, index: u64) -> SceneSetup {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, domain, index));
    let cameras = (0..cfg.cameras_per_scene)
        .map(|_| draw_camera(&mut rng, &cfg.camera))
        .collect();
    let tag = APPEARANCE_TAGS[rng.gen_range(0..APPEARANCE_TAGS.len())].to_string();
    SceneSetup { cameras, tag }
}

/// Generate the full synthetic world for a config.
pub fn generate_pools(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    if cfg.embodiments.len() < 2 {
        return Err(Error::Config(
            "generate_pools needs at least 2 embodiments (target + sources)".to_string(),
        ));
    }
    let target_spec = &cfg.embodiments[0];
    let sources = &cfg.embodiments[1..];
    let steps = cfg.steps_per_trajectory;

    struct PairedRender {
        target: Trajectory,
        source: Trajectory,
        heldout: Trajectory,
    }

    let render_paired = |k: usize| -> Result<PairedRender> {
        let base = generate_base_motion(derive_seed(cfg.seed, "motion/paired", k as u64), steps)?;
        let setup = scene_setup(cfg, "scene/paired", k as u64);
        let scene_id = format!("scene_{k:04}");
        let source_spec = &sources[k % sources.len()];
        let target = render_embodiment(
            &base,
            target_spec,
            setup.cameras[0].clone(),
            &format!("t_{k:04}"),
            &scene_id,
            &setup.tag,
            cfg.noise_sigma,
            derive_seed(cfg.seed, "noise/target", k as u64),
        );
        let source = render_embodiment(
            &base,
            source_spec,
            setup.cameras[1 % setup.cameras.len()].clone(),
            &format!("s_{k:04}"),
            &scene_id,
            &setup.tag,
            cfg.noise_sigma,
            derive_seed(cfg.seed, "noise/source", k as u64),
        );
        let heldout = render_embodiment(
            &base,
            target_spec,
            setup.cameras[2 % setup.cameras.len()].clone(),
            &format!("h_{k:04}"),
            &scene_id,
            &setup.tag,
            cfg.noise_sigma,
            derive_seed(cfg.seed, "noise/heldout", k as u64),
        );
        Ok(PairedRender {
            target,
            source,
            heldout,
        })
    };

    let render_unpaired = |k: usize| -> Result<Trajectory> {
        let base =
            generate_base_motion(derive_seed(cfg.seed, "motion/unpaired", k as u64), steps)?;
        let setup = scene_setup(cfg, "scene/unpaired", k as u64);
        let spec = &sources[k % sources.len()];
        Ok(render_embodiment(
            &base,
            spec,
            setup.cameras[0].clone(),
            &format!("u_{k:04}"),
            &format!("scene_u{k:04}"),
            &setup.tag,
            cfg.noise_sigma,
            derive_seed(cfg.seed, "noise/unpaired", k as u64),
        ))
    };

    #[cfg(feature = "parallel")]
    let paired: Vec<PairedRender> = (0..cfg.num_base_motions)
        .into_par_iter()
        .map(render_paired)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let paired: Vec<PairedRender> = (0..cfg.num_base_motions)
        .map(render_paired)
        .collect::<Result<_>>()?;

    #[cfg(feature = "parallel")]
    let unpaired: Vec<Trajectory> = (0..cfg.num_unpaired_motions)
        .into_par_iter()
        .map(render_unpaired)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let unpaired: Vec<Trajectory> = (0..cfg.num_unpaired_motions)
        .map(render_unpaired)
        .collect::<Result<_>>()?;

    let mut gt_pairs = BTreeMap::new();
    let mut target_trajs = Vec::with_capacity(paired.len());
    let mut source_trajs = Vec::with_capacity(paired.len());
    let mut heldout_trajs = Vec::with_capacity(paired.len());
    for r in paired {
        gt_pairs.insert(r.target.trajectory_id.clone(), r.source.trajectory_id.clone());
        target_trajs.push(r.target);
        source_trajs.push(r.source);
        heldout_trajs.push(r.heldout);
    }

    let mut task_keypoints = TaskKeypointMap::new();
    task_keypoints.insert(
        SYNTH_TASK_ID.to_string(),
        [SYNTH_KEYPOINT_ID.to_string()].into_iter().collect(),
    );

    Ok(SynthWorld {
        target: Pool::new("target", PoolRole::TargetFewShot, target_trajs),
        paired_sources: Pool::new(
            "paired_sources",
            PoolRole::SourcePairedCandidates,
            source_trajs,
        ),
        unpaired_sources: Pool::new("unpaired_sources", PoolRole::SourceUnpaired, unpaired),
        heldout_targets: Pool::new("heldout_targets", PoolRole::TargetFewShot, heldout_trajs),
        gt_pairs,
        task_keypoints,
    })
}
