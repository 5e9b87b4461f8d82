//! Dynamic-time-warping alignment and nearest-neighbor pairing.
//!
//! Feature tracks are compared with a weighted step distance over
//! position, orientation, gripper, and progress channels. The DTW
//! recurrence is the standard cumulative one,
//! `D(i,j) = c(i,j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1))`, and each
//! target trajectory is paired with the source whose aligned cost is
//! minimal, exact ties going to the lexicographically smallest source
//! id so manifests are reproducible.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{prepare_track, EventParams, FeatureStep, FeatureTrack};
use crate::geom;
use crate::trajectory::{Pool, TaskKeypointMap};

/// Channel weights for the step distance.
///
/// Units: `w_pos` and `w_prog` are per meter, `w_rot` per radian,
/// `w_grip` dimensionless. All must be non-negative with at least one
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceWeights {
    pub w_pos: f64,
    pub w_rot: f64,
    pub w_grip: f64,
    pub w_prog: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        // Tabletop-scale defaults: a 10 cm position error costs the
        // same as a 1 rad rotation error or a full gripper-state flip
        // costs 0.2. All configurable.
        DistanceWeights {
            w_pos: 1.0,
            w_rot: 0.1,
            w_grip: 0.2,
            w_prog: 1.0,
        }
    }
}

impl DistanceWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_pos, self.w_rot, self.w_grip, self.w_prog];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "distance weights must be finite and non-negative".to_string(),
            ));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(
                "at least one distance weight must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Weighted distance between two feature steps.
pub fn step_distance(a: &FeatureStep, b: &FeatureStep, w: &DistanceWeights) -> f64 {
    w.w_pos * geom::dist(a.position, b.position)
        + w.w_rot * a.orientation.geodesic_angle(&b.orientation)
        + w.w_grip * (a.gripper - b.gripper).abs()
        + w.w_prog * (a.progress - b.progress).abs()
}

/// A monotone alignment path through the cost matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    /// Check boundary and step conditions for an alignment of an
    /// `m`-step track against an `n`-step track.
    pub fn is_valid(&self, m: usize, n: usize) -> bool {
        if self.pairs.first() != Some(&(0, 0)) {
            return false;
        }
        if self.pairs.last() != Some(&(m - 1, n - 1)) {
            return false;
        }
        self.pairs.windows(2).all(|w| {
            let di = w[1].0 as i64 - w[0].0 as i64;
            let dj = w[1].1 as i64 - w[0].1 as i64;
            (di == 0 || di == 1) && (dj == 0 || dj == 1) && (di + dj > 0)
        })
    }
}

/// One matched source trajectory for a target, with alignment cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub target_id: String,
    pub source_id: String,
    pub cost: f64,
    pub path: WarpPath,
}

/// Which part of each track participates in alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    /// Start through the event keypoint (falls back to full when absent).
    Approach,
    /// The whole track.
    Full,
}

/// Options controlling trajectory pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingOptions {
    pub weights: DistanceWeights,
    pub segment: SegmentMode,
    /// Fixed length both tracks are resampled to before alignment.
    pub resample_len: usize,
    /// Optional Sakoe-Chiba band half-width; `None` evaluates the full
    /// table (cheap at the default resample length).
    pub band: Option<usize>,
}

impl Default for PairingOptions {
    fn default() -> Self {
        PairingOptions {
            weights: DistanceWeights::default(),
            segment: SegmentMode::Approach,
            resample_len: crate::features::DEFAULT_RESAMPLE_LEN,
            band: None,
        }
    }
}

/// Align two feature tracks, returning the cumulative cost and one
/// minimizing path (ties broken by preferring the diagonal predecessor,
/// then the `i-1` one).
pub fn dtw(
    a: &FeatureTrack,
    b: &FeatureTrack,
    w: &DistanceWeights,
    band: Option<usize>,
) -> Result<(f64, WarpPath)> {
    let m = a.len();
    let n = b.len();
    if m == 0 || n == 0 {
        let empty = if m == 0 { a } else { b };
        return Err(Error::TrackTooShort {
            trajectory_id: empty.trajectory_id.clone(),
            len: 0,
        });
    }

    // Widen the band so the corridor always reaches the final cell.
    let eff_band = band.map(|w| w.max(m.abs_diff(n)));
    let in_band = |i: usize, j: usize| -> bool {
        match eff_band {
            None => true,
            Some(w) => {
                let diag = if m == 1 {
                    0.0
                } else {
                    i as f64 * (n - 1) as f64 / (m - 1) as f64
                };
                (j as f64 - diag).abs() <= w as f64
            }
        }
    };

    let mut table = vec![f64::INFINITY; m * n];
    for i in 0..m {
        for j in 0..n {
            if !in_band(i, j) {
                continue;
            }
            let c = step_distance(&a.steps[i], &b.steps[j], w);
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(table[(i - 1) * n + (j - 1)]);
                }
                if i > 0 {
                    best = best.min(table[(i - 1) * n + j]);
                }
                if j > 0 {
                    best = best.min(table[i * n + (j - 1)]);
                }
                best
            };
            table[i * n + j] = c + best_prev;
        }
    }

    let cost = table[(m - 1) * n + (n - 1)];

    // Backtrack, reproducing the forward tie-break: diagonal first,
    // then the i-1 predecessor, then j-1.
    let mut pairs = Vec::with_capacity(m + n);
    let (mut i, mut j) = (m - 1, n - 1);
    pairs.push((i, j));
    while i > 0 || j > 0 {
        let mut candidates: Vec<(usize, usize)> = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            candidates.push((i - 1, j - 1));
        }
        if i > 0 {
            candidates.push((i - 1, j));
        }
        if j > 0 {
            candidates.push((i, j - 1));
        }
        let best = candidates
            .iter()
            .map(|&(pi, pj)| table[pi * n + pj])
            .fold(f64::INFINITY, f64::min);
        let &(pi, pj) = candidates
            .iter()
            .find(|&&(pi, pj)| table[pi * n + pj] == best)
            .expect("at least one predecessor");
        i = pi;
        j = pj;
        pairs.push((i, j));
    }
    pairs.reverse();

    Ok((cost, WarpPath { pairs }))
}

fn nearest_source(
    target: &FeatureTrack,
    sources: &[FeatureTrack],
    w: &DistanceWeights,
    band: Option<usize>,
) -> Result<PairingResult> {
    let mut best: Option<PairingResult> = None;
    for s in sources {
        let (cost, path) = dtw(target, s, w, band)?;
        let better = match &best {
            None => true,
            Some(b) => {
                cost < b.cost || (cost == b.cost && s.trajectory_id < b.source_id)
            }
        };
        if better {
            best = Some(PairingResult {
                target_id: target.trajectory_id.clone(),
                source_id: s.trajectory_id.clone(),
                cost,
                path,
            });
        }
    }
    best.ok_or_else(|| Error::EmptyPool {
        pool: "sources".to_string(),
        context: ": pairing needs at least one source track".to_string(),
    })
}

/// Sequential nearest-neighbor pairing of prepared tracks.
///
/// This is the reference implementation the parallel path must match
/// exactly; it stays available regardless of features for comparison
/// and benchmarking.
pub fn pair_tracks_seq(
    targets: &[FeatureTrack],
    sources: &[FeatureTrack],
    w: &DistanceWeights,
    band: Option<usize>,
) -> Result<Vec<PairingResult>> {
    if sources.is_empty() {
        return Err(Error::EmptyPool {
            pool: "sources".to_string(),
            context: ": pairing needs at least one source track".to_string(),
        });
    }
    targets
        .iter()
        .map(|t| nearest_source(t, sources, w, band))
        .collect()
}

/// Nearest-neighbor pairing of prepared tracks, parallel over targets
/// when the `parallel` feature is enabled. Output is identical to
/// [`pair_tracks_seq`] — per-target results are independent and the
/// tie-break does not depend on evaluation order.
pub fn pair_tracks(
    targets: &[FeatureTrack],
    sources: &[FeatureTrack],
    w: &DistanceWeights,
    band: Option<usize>,
) -> Result<Vec<PairingResult>> {
    if sources.is_empty() {
        return Err(Error::EmptyPool {
            pool: "sources".to_string(),
            context: ": pairing needs at least one source track".to_string(),
        });
    }
    #[cfg(feature = "parallel")]
    {
        targets
            .par_iter()
            .map(|t| nearest_source(t, sources, w, band))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pair_tracks_seq(targets, sources, w, band)
    }
}

/// Prepare feature tracks for every trajectory in a pool: extract,
/// slice to the configured segment, and resample.
pub fn prepare_pool_tracks(
    pool: &Pool,
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
    opts: &PairingOptions,
) -> Result<Vec<FeatureTrack>> {
    let approach = opts.segment == SegmentMode::Approach;
    #[cfg(feature = "parallel")]
    {
        pool.trajectories
            .par_iter()
            .map(|t| prepare_track(t, tasks, params, approach, opts.resample_len))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pool.trajectories
            .iter()
            .map(|t| prepare_track(t, tasks, params, approach, opts.resample_len))
            .collect()
    }
}

/// Pair every target trajectory with its nearest source under the DTW
/// cost on the configured segment.
pub fn pair_trajectories(
    targets: &Pool,
    sources: &Pool,
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
    opts: &PairingOptions,
) -> Result<Vec<PairingResult>> {
    opts.weights.validate()?;
    if targets.is_empty() {
        return Err(Error::EmptyPool {
            pool: targets.pool_id.clone(),
            context: ": pairing needs a non-empty target pool".to_string(),
        });
    }
    if sources.is_empty() {
        return Err(Error::EmptyPool {
            pool: sources.pool_id.clone(),
            context: ": pairing needs a non-empty source pool".to_string(),
        });
    }
    let target_tracks = prepare_pool_tracks(targets, tasks, params, opts)?;
    let source_tracks = prepare_pool_tracks(sources, tasks, params, opts)?;
    pair_tracks(&target_tracks, &source_tracks, &opts.weights, opts.band)
}
