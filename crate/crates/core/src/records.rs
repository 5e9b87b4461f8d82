//! Line-delimited record files.
//!
//! Every artifact is UTF-8 text with one JSON record per line. The first
//! field of every record is `schema`, a versioned tag such as
//! `trajectory.v1`, so consumers can reject files they do not
//! understand before touching the payload. Files are written atomically
//! (temp file in the same directory, then rename).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dtw::{PairingResult, WarpPath};
use crate::error::{Error, Result};
use crate::features::FeatureTrack;
use crate::geom::{Quat, Vec3};
use crate::trajectory::{
    validate_trajectory, CameraSpec, EmbodimentDescriptor, Pool, PoolRole, Pose, TaskKeypointMap,
    TimeStep, Trajectory,
};

pub const TRAJECTORY_SCHEMA: &str = "trajectory.v1";
pub const FEATURE_TRACK_SCHEMA: &str = "feature_track.v1";
pub const PAIRING_SCHEMA: &str = "pairing.v1";
pub const GT_PAIR_SCHEMA: &str = "gt_pair.v1";
pub const HEADER_SCHEMA: &str = "header.v1";

/// First record of every CLI artifact: identifies what produced the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
}

/// Serialize a payload as one record line with the schema tag in
/// position one.
pub fn record_line<T: Serialize>(schema: &str, payload: &T) -> String {
    let body = serde_json::to_string(payload).expect("record serialization cannot fail");
    debug_assert!(body.starts_with('{'));
    if body == "{}" {
        return format!("{{\"schema\":\"{schema}\"}}");
    }
    format!("{{\"schema\":\"{schema}\",{}", &body[1..])
}

/// Parse one record line, checking the schema tag before deserializing.
/// Errors are plain strings so callers can turn them into skip
/// diagnostics or hard failures as their contract requires.
pub fn parse_record<T: DeserializeOwned>(
    line: &str,
    expected_schema: &str,
) -> std::result::Result<T, String> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value
        .as_object()
        .ok_or_else(|| "record must be a JSON object".to_string())?;
    match obj.get("schema").and_then(|v| v.as_str()) {
        Some(s) if s == expected_schema => {}
        Some(s) => return Err(format!("schema '{s}' where '{expected_schema}' expected")),
        None => return Err("missing 'schema' field".to_string()),
    }
    serde_json::from_value(value).map_err(|e| format!("invalid {expected_schema} record: {e}"))
}

/// Read the schema tag of a record line without deserializing the body.
pub fn peek_schema(line: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    value.get("schema")?.as_str().map(str::to_string)
}

/// Write lines to `path` atomically.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        for line in lines {
            f.write_all(line.as_bytes()).map_err(io_err)?;
            f.write_all(b"\n").map_err(io_err)?;
        }
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

/// Read all non-empty lines of a record file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Trajectory pools
// ---------------------------------------------------------------------

/// Raw orientation as found on the wire: a `[w,x,y,z]` quaternion or a
/// row-major 3x3 rotation matrix, converted on ingest.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawOrientation {
    Quaternion([f64; 4]),
    Matrix([f64; 9]),
}

#[derive(Debug, Deserialize)]
struct RawPose {
    position: Vec3,
    orientation: RawOrientation,
}

#[derive(Debug, Deserialize)]
struct RawTimeStep {
    time_index: u64,
    ee_pose: RawPose,
    gripper: f64,
    #[serde(default)]
    action: Option<Vec<f64>>,
    #[serde(default)]
    object_keypoints: Vec<(String, Vec3)>,
}

#[derive(Debug, Deserialize)]
struct RawTrajectory {
    trajectory_id: String,
    embodiment: EmbodimentDescriptor,
    task_id: String,
    task_prompt: String,
    scene_id: String,
    camera: CameraSpec,
    appearance_tag: String,
    steps: Vec<RawTimeStep>,
}

fn convert_raw(raw: RawTrajectory) -> std::result::Result<Trajectory, String> {
    // Gripper values are normalized to [0,1] using the declared aperture
    // range; the range is then dropped so normalization is applied once.
    let gripper_map: Box<dyn Fn(f64) -> f64> = match raw.embodiment.gripper_aperture_range {
        Some((lo, hi)) => {
            if !hi.is_finite() || !lo.is_finite() || hi <= lo {
                return Err(format!(
                    "embodiment '{}' declares empty gripper_aperture_range ({lo}, {hi})",
                    raw.embodiment.embodiment_id
                ));
            }
            Box::new(move |g| (g - lo) / (hi - lo))
        }
        None => Box::new(|g| g),
    };

    let steps = raw
        .steps
        .into_iter()
        .map(|s| TimeStep {
            time_index: s.time_index,
            ee_pose: Pose {
                position: s.ee_pose.position,
                orientation: match s.ee_pose.orientation {
                    RawOrientation::Quaternion(q) => Quat(q),
                    RawOrientation::Matrix(m) => Quat::from_rotation_matrix(&m),
                },
            },
            gripper: gripper_map(s.gripper),
            action: s.action,
            object_keypoints: s.object_keypoints,
        })
        .collect();

    let mut embodiment = raw.embodiment;
    embodiment.gripper_aperture_range = None;

    Ok(Trajectory {
        trajectory_id: raw.trajectory_id,
        embodiment,
        task_id: raw.task_id,
        task_prompt: raw.task_prompt,
        scene_id: raw.scene_id,
        camera: raw.camera,
        appearance_tag: raw.appearance_tag,
        steps,
    })
}

/// Why a record was skipped during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

/// Result of ingesting a pool file: the validated pool plus skip
/// diagnostics and warnings.
#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub pool: Pool,
    pub rejections: Vec<Rejection>,
    pub warnings: Vec<String>,
}

/// Write a pool, one trajectory record per line.
pub fn write_pool(path: &Path, pool: &Pool) -> Result<()> {
    let lines: Vec<String> = pool
        .trajectories
        .iter()
        .map(|t| record_line(TRAJECTORY_SCHEMA, t))
        .collect();
    write_lines(path, &lines)
}

/// Ingest a pool from a record file.
///
/// An unreadable file is a hard error. Malformed or invalid records are
/// skipped with a diagnostic naming the line and the violated rule.
/// Pool-level invariant violations (duplicate ids are handled per
/// record; a multi-embodiment target pool is not) abort the ingest.
pub fn ingest_pool(
    path: &Path,
    pool_id: impl Into<String>,
    role: PoolRole,
    tasks: Option<&TaskKeypointMap>,
) -> Result<IngestOutcome> {
    let lines = read_lines(path)?;
    pool_from_lines(&lines, 0, &path.display().to_string(), pool_id, role, tasks)
}

/// Ingest a pool from pre-read record lines. `line_offset` is added to
/// diagnostics so callers that strip leading header records still report
/// true file positions.
pub fn pool_from_lines(
    lines: &[String],
    line_offset: usize,
    source_label: &str,
    pool_id: impl Into<String>,
    role: PoolRole,
    tasks: Option<&TaskKeypointMap>,
) -> Result<IngestOutcome> {
    let pool_id = pool_id.into();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut rejections = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids = std::collections::BTreeSet::new();

    for (idx, line) in lines.iter().enumerate() {
        let lineno = idx + 1 + line_offset;
        let raw: RawTrajectory = match parse_record(line, TRAJECTORY_SCHEMA) {
            Ok(r) => r,
            Err(reason) => {
                rejections.push(Rejection {
                    line: lineno,
                    reason,
                });
                continue;
            }
        };
        let t = match convert_raw(raw) {
            Ok(t) => t,
            Err(reason) => {
                rejections.push(Rejection {
                    line: lineno,
                    reason,
                });
                continue;
            }
        };
        if !seen_ids.insert(t.trajectory_id.clone()) {
            rejections.push(Rejection {
                line: lineno,
                reason: format!("duplicate trajectory_id '{}'", t.trajectory_id),
            });
            continue;
        }
        let report = validate_trajectory(&t, tasks);
        if !report.is_empty() {
            let summary = report
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            rejections.push(Rejection {
                line: lineno,
                reason: format!("trajectory '{}' invalid: {summary}", t.trajectory_id),
            });
            continue;
        }
        trajectories.push(t);
    }

    if trajectories.is_empty() {
        warnings.push(format!(
            "{source_label}: no valid trajectory records ({} rejected)",
            rejections.len()
        ));
    }

    let pool = Pool::new(pool_id, role, trajectories);
    let pool_violations = pool.validate();
    if let Some(v) = pool_violations.first() {
        return Err(Error::PoolInvariant {
            pool: pool.pool_id,
            reason: v.to_string(),
        });
    }

    Ok(IngestOutcome {
        pool,
        rejections,
        warnings,
    })
}

// ---------------------------------------------------------------------
// Feature tracks, pairings, ground truth
// ---------------------------------------------------------------------

pub fn write_feature_tracks(path: &Path, tracks: &[FeatureTrack]) -> Result<()> {
    let lines: Vec<String> = tracks
        .iter()
        .map(|t| record_line(FEATURE_TRACK_SCHEMA, t))
        .collect();
    write_lines(path, &lines)
}

pub fn read_feature_tracks(path: &Path) -> Result<Vec<FeatureTrack>> {
    feature_tracks_from_lines(&read_lines(path)?, 0, &path.display().to_string())
}

pub fn feature_tracks_from_lines(
    lines: &[String],
    line_offset: usize,
    source_label: &str,
) -> Result<Vec<FeatureTrack>> {
    lines
        .iter()
        .enumerate()
        .map(|(idx, line)| {
            parse_record(line, FEATURE_TRACK_SCHEMA).map_err(|reason| Error::Record {
                path: source_label.to_string(),
                line: idx + 1 + line_offset,
                reason,
            })
        })
        .collect()
}

/// Pairing record as exported; the warp path is optional on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairingRecord {
    pub target_id: String,
    pub source_id: String,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Vec<(usize, usize)>>,
}

pub fn write_pairings(path: &Path, pairings: &[PairingResult], include_path: bool) -> Result<()> {
    let lines: Vec<String> = pairings
        .iter()
        .map(|p| {
            let rec = PairingRecord {
                target_id: p.target_id.clone(),
                source_id: p.source_id.clone(),
                cost: p.cost,
                path: include_path.then(|| p.path.pairs.clone()),
            };
            record_line(PAIRING_SCHEMA, &rec)
        })
        .collect();
    write_lines(path, &lines)
}

pub fn read_pairings(path: &Path) -> Result<Vec<PairingResult>> {
    pairings_from_lines(&read_lines(path)?, 0, &path.display().to_string())
}

pub fn pairings_from_lines(
    lines: &[String],
    line_offset: usize,
    source_label: &str,
) -> Result<Vec<PairingResult>> {
    lines
        .iter()
        .enumerate()
        .map(|(idx, line)| {
            let rec: PairingRecord =
                parse_record(line, PAIRING_SCHEMA).map_err(|reason| Error::Record {
                    path: source_label.to_string(),
                    line: idx + 1 + line_offset,
                    reason,
                })?;
            Ok(PairingResult {
                target_id: rec.target_id,
                source_id: rec.source_id,
                cost: rec.cost,
                path: WarpPath {
                    pairs: rec.path.unwrap_or_default(),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GtPairRecord {
    target_id: String,
    source_id: String,
}

pub fn write_gt_pairs(path: &Path, pairs: &BTreeMap<String, String>) -> Result<()> {
    let lines: Vec<String> = pairs
        .iter()
        .map(|(t, s)| {
            record_line(
                GT_PAIR_SCHEMA,
                &GtPairRecord {
                    target_id: t.clone(),
                    source_id: s.clone(),
                },
            )
        })
        .collect();
    write_lines(path, &lines)
}

pub fn read_gt_pairs(path: &Path) -> Result<BTreeMap<String, String>> {
    gt_pairs_from_lines(&read_lines(path)?, 0, &path.display().to_string())
}

pub fn gt_pairs_from_lines(
    lines: &[String],
    line_offset: usize,
    source_label: &str,
) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (idx, line) in lines.iter().enumerate() {
        let rec: GtPairRecord =
            parse_record(line, GT_PAIR_SCHEMA).map_err(|reason| Error::Record {
                path: source_label.to_string(),
                line: idx + 1 + line_offset,
                reason,
            })?;
        out.insert(rec.target_id, rec.source_id);
    }
    Ok(out)
}
