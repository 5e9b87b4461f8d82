//! Named source-selection strategies.
//!
//! The four strategies factor coverage against pairing: uniform
//! sampling, targeted gap-filling, task-instance matching by metadata,
//! and trajectory-level matching by DTW nearest neighbor. Diverse
//! stratified sampling and a full-pool baseline round out the set for
//! strategy comparisons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::coverage::{select_diverse, select_targeted, select_uniform, BinSpec};
use crate::dtw::{pair_trajectories, PairingOptions};
use crate::error::{Error, Result};
use crate::features::EventParams;
use crate::rng::{rng_from_seed, shuffle};
use crate::trajectory::{Pool, PoolRole, TaskKeypointMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// Uniform sample across all candidates.
    Uniform,
    /// Fill coverage gaps relative to the target pool.
    Targeted { spec: BinSpec },
    /// Stratify evenly across occupied bins, target-unaware.
    Diverse { spec: BinSpec },
    /// Same task instance as a target: equal (task_id, scene_id).
    TaskPaired,
    /// DTW nearest neighbors of the target trajectories.
    TrajectoryPaired,
    /// Everything; the no-budget reference.
    FullPool,
}

impl SelectionStrategy {
    pub fn label(&self) -> String {
        match self {
            SelectionStrategy::Uniform => "uniform".to_string(),
            SelectionStrategy::Targeted { spec } => format!("targeted_{}", spec.axis_name()),
            SelectionStrategy::Diverse { spec } => format!("diverse_{}", spec.axis_name()),
            SelectionStrategy::TaskPaired => "task_paired".to_string(),
            SelectionStrategy::TrajectoryPaired => "trajectory_paired".to_string(),
            SelectionStrategy::FullPool => "full_pool".to_string(),
        }
    }
}

/// Everything a strategy may need to run.
pub struct StrategyContext<'a> {
    pub target: &'a Pool,
    pub candidates: &'a Pool,
    pub tasks: Option<&'a TaskKeypointMap>,
    pub event_params: &'a EventParams,
    pub pairing: &'a PairingOptions,
}

/// Run a strategy, returning at most `budget` distinct candidate ids.
pub fn apply_strategy(
    strategy: &SelectionStrategy,
    ctx: &StrategyContext<'_>,
    budget: usize,
    seed: u64,
) -> Result<Vec<String>> {
    match strategy {
        SelectionStrategy::Uniform => {
            Ok(select_uniform(ctx.candidates, budget, seed)?.selected_ids)
        }
        SelectionStrategy::Targeted { spec } => {
            Ok(select_targeted(ctx.candidates, ctx.target, spec, budget, seed)?.selected_ids)
        }
        SelectionStrategy::Diverse { spec } => {
            Ok(select_diverse(ctx.candidates, spec, budget, seed)?.selected_ids)
        }
        SelectionStrategy::TaskPaired => task_paired(ctx, budget, seed),
        SelectionStrategy::TrajectoryPaired => trajectory_paired(ctx, budget, seed),
        SelectionStrategy::FullPool => Ok(ctx.candidates.ids()),
    }
}

/// Filter candidates to the target's task instances — equal
/// (task_id, scene_id) — then sample uniformly to the budget.
fn task_paired(ctx: &StrategyContext<'_>, budget: usize, seed: u64) -> Result<Vec<String>> {
    let instances: BTreeSet<(&str, &str)> = ctx
        .target
        .trajectories
        .iter()
        .map(|t| (t.task_id.as_str(), t.scene_id.as_str()))
        .collect();
    let matched: Vec<_> = ctx
        .candidates
        .trajectories
        .iter()
        .filter(|t| instances.contains(&(t.task_id.as_str(), t.scene_id.as_str())))
        .cloned()
        .collect();
    if matched.is_empty() {
        return Err(Error::EmptyPool {
            pool: ctx.candidates.pool_id.clone(),
            context: ": no candidate shares a (task_id, scene_id) with the target".to_string(),
        });
    }
    let filtered = Pool::new("task_paired", PoolRole::SourcePairedCandidates, matched);
    Ok(select_uniform(&filtered, budget, seed)?.selected_ids)
}

/// Take the DTW nearest neighbors of the target trajectories, best
/// alignments first, topping up uniformly when fewer than `budget`
/// distinct sources are matched.
fn trajectory_paired(ctx: &StrategyContext<'_>, budget: usize, seed: u64) -> Result<Vec<String>> {
    let mut pairings = pair_trajectories(
        ctx.target,
        ctx.candidates,
        ctx.tasks,
        ctx.event_params,
        ctx.pairing,
    )?;
    pairings.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .expect("finite costs")
            .then_with(|| a.target_id.cmp(&b.target_id))
    });
    let mut selected: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &pairings {
        if selected.len() >= budget {
            break;
        }
        if seen.insert(p.source_id.clone()) {
            selected.push(p.source_id.clone());
        }
    }
    if selected.len() < budget {
        let mut rest: Vec<String> = ctx
            .candidates
            .trajectories
            .iter()
            .map(|t| t.trajectory_id.clone())
            .filter(|id| !seen.contains(id))
            .collect();
        rest.sort();
        let mut rng = rng_from_seed(seed);
        shuffle(&mut rest, &mut rng);
        let need = budget - selected.len();
        selected.extend(rest.into_iter().take(need.min(ctx.candidates.len())));
    }
    Ok(selected)
}
