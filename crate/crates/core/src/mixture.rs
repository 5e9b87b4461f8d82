//! Budget enforcement, mixture manifests, and batch schedules.
//!
//! The composer ends at the manifest/schedule boundary: it decides which
//! trajectory ids feed a training run and in what per-batch proportions,
//! and emits a deterministic, replayable schedule. Per-batch stream
//! counts come from largest-remainder rounding of the configured
//! ratios, computed once and fixed for every batch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::coverage::WeightedSampler;
use crate::dtw::PairingResult;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, sample_indices, shuffle, DetRng};
use crate::trajectory::Pool;

/// How under-populated (robot, task) groups are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Any deficient group aborts with an error naming every one.
    Strict,
    /// Deficient groups pass through whole and are flagged.
    Lenient,
}

/// Mixture ratios, budgets, and the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureConfig {
    /// Fraction of each batch drawn from the target stream.
    pub target_fraction: f64,
    /// Fraction of the source share drawn from the unpaired pool.
    pub source_unpaired_fraction: f64,
    pub batch_size: usize,
    /// Source entries seen per epoch; must be a multiple of the
    /// per-batch source count.
    pub source_samples_per_epoch: usize,
    /// Demonstrations retained per (robot, task) group.
    pub budget_per_robot_task: usize,
    pub budget_mode: BudgetMode,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            target_fraction: 0.5,
            source_unpaired_fraction: 0.6,
            batch_size: 32,
            source_samples_per_epoch: 1600,
            budget_per_robot_task: 50,
            budget_mode: BudgetMode::Strict,
            seed: 0,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_fraction) || !self.target_fraction.is_finite() {
            return Err(Error::Config(format!(
                "target_fraction must be in [0, 1], got {}",
                self.target_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.source_unpaired_fraction)
            || !self.source_unpaired_fraction.is_finite()
        {
            return Err(Error::Config(format!(
                "source_unpaired_fraction must be in [0, 1], got {}",
                self.source_unpaired_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.budget_per_robot_task == 0 {
            return Err(Error::Config(
                "budget_per_robot_task must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// A (robot, task) group that had fewer trajectories than the budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeficientGroup {
    pub embodiment_id: String,
    pub task_id: String,
    pub count: usize,
}

/// Subsample each (embodiment, task) group down to exactly `budget`
/// trajectories (seeded, uniform). Groups below the budget error out in
/// strict mode — the error names every deficient group — or pass
/// through whole in lenient mode, flagged in the returned list.
pub fn enforce_budget(
    pool: &Pool,
    budget: usize,
    mode: BudgetMode,
    seed: u64,
) -> Result<(Pool, Vec<DeficientGroup>)> {
    if budget == 0 {
        return Err(Error::Config("budget must be >= 1".to_string()));
    }
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (idx, t) in pool.trajectories.iter().enumerate() {
        groups
            .entry((t.embodiment.embodiment_id.clone(), t.task_id.clone()))
            .or_default()
            .push(idx);
    }

    let mut deficient = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut rng = rng_from_seed(derive_seed(seed, "budget", 0));
    for ((embodiment_id, task_id), members) in &groups {
        if members.len() < budget {
            deficient.push(DeficientGroup {
                embodiment_id: embodiment_id.clone(),
                task_id: task_id.clone(),
                count: members.len(),
            });
            kept.extend(members.iter().copied());
        } else {
            let chosen = sample_indices(members.len(), budget, &mut rng);
            kept.extend(chosen.into_iter().map(|i| members[i]));
        }
    }

    if mode == BudgetMode::Strict && !deficient.is_empty() {
        let detail = deficient
            .iter()
            .map(|g| {
                format!(
                    "({}, {}) has {} < {budget}",
                    g.embodiment_id, g.task_id, g.count
                )
            })
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::BudgetDeficit(detail));
    }

    kept.sort_unstable();
    let trajectories = kept
        .into_iter()
        .map(|i| pool.trajectories[i].clone())
        .collect();
    Ok((
        Pool::new(pool.pool_id.clone(), pool.role, trajectories),
        deficient,
    ))
}

/// The composed dataset: id lists per stream plus sampling weights for
/// the unpaired stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub target_ids: Vec<String>,
    pub paired_ids: Vec<String>,
    pub unpaired_ids: Vec<String>,
    /// Probabilities over `unpaired_ids`, summing to one.
    pub unpaired_weights: Vec<(String, f64)>,
    pub config: MixtureConfig,
    /// Strategy label per stream.
    pub provenance: BTreeMap<String, String>,
}

impl MixtureManifest {
    pub fn validate(&self) -> Result<()> {
        for (name, ids) in [
            ("target_ids", &self.target_ids),
            ("paired_ids", &self.paired_ids),
            ("unpaired_ids", &self.unpaired_ids),
        ] {
            let unique: BTreeSet<&String> = ids.iter().collect();
            if unique.len() != ids.len() {
                return Err(Error::Config(format!("manifest {name} contains duplicates")));
            }
        }
        if !self.unpaired_ids.is_empty() {
            let sum: f64 = self.unpaired_weights.iter().map(|(_, w)| w).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "unpaired_weights sum to {sum}, expected 1"
                )));
            }
            let ids: BTreeSet<&String> = self.unpaired_ids.iter().collect();
            if self.unpaired_weights.len() != self.unpaired_ids.len()
                || !self.unpaired_weights.iter().all(|(id, _)| ids.contains(id))
            {
                return Err(Error::Config(
                    "unpaired_weights must cover exactly unpaired_ids".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Compose the final mixture: enforce per-stream budgets, carry the
/// flattening weights through to the surviving unpaired ids, and record
/// provenance. Deterministic given the config seed.
pub fn compose(
    target: &Pool,
    pairings: &[PairingResult],
    paired_pool: &Pool,
    unpaired: &Pool,
    unpaired_flatten: &[(String, f64)],
    flatten_label: &str,
    cfg: &MixtureConfig,
) -> Result<MixtureManifest> {
    cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyPool {
            pool: target.pool_id.clone(),
            context: ": compose needs a non-empty target pool".to_string(),
        });
    }
    let source_needed = cfg.target_fraction < 1.0;
    if source_needed && pairings.is_empty() && unpaired.is_empty() {
        return Err(Error::Config(
            "target_fraction < 1 requires a paired or unpaired source".to_string(),
        ));
    }

    let mut provenance = BTreeMap::new();

    let (target_budgeted, target_deficient) = enforce_budget(
        target,
        cfg.budget_per_robot_task,
        cfg.budget_mode,
        derive_seed(cfg.seed, "compose/target", 0),
    )?;
    provenance.insert(
        "target".to_string(),
        format!(
            "few_shot(budget={}, deficient_groups={})",
            cfg.budget_per_robot_task,
            target_deficient.len()
        ),
    );

    // Distinct nearest-neighbor sources, in order of first appearance.
    let mut paired_ids: Vec<String> = Vec::new();
    if source_needed && cfg.source_unpaired_fraction < 1.0 {
        let mut seen = BTreeSet::new();
        let picked: Vec<String> = pairings
            .iter()
            .filter(|p| seen.insert(p.source_id.clone()))
            .map(|p| p.source_id.clone())
            .collect();
        let by_id = paired_pool.index_by_id();
        let missing: Vec<&String> = picked
            .iter()
            .filter(|id| !by_id.contains_key(id.as_str()))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "pairing results reference ids missing from the paired pool: {missing:?}"
            )));
        }
        let sub = Pool::new(
            format!("{}_paired", paired_pool.pool_id),
            paired_pool.role,
            picked
                .iter()
                .map(|id| (*by_id[id.as_str()]).clone())
                .collect(),
        );
        let (budgeted, deficient) = enforce_budget(
            &sub,
            cfg.budget_per_robot_task,
            cfg.budget_mode,
            derive_seed(cfg.seed, "compose/paired", 0),
        )?;
        paired_ids = budgeted.ids();
        provenance.insert(
            "paired".to_string(),
            format!(
                "trajectory_paired(pairs={}, distinct_sources={}, deficient_groups={})",
                pairings.len(),
                picked.len(),
                deficient.len()
            ),
        );
    }

    let mut unpaired_ids: Vec<String> = Vec::new();
    let mut unpaired_weights: Vec<(String, f64)> = Vec::new();
    if source_needed && cfg.source_unpaired_fraction > 0.0 && !unpaired.is_empty() {
        let (budgeted, deficient) = enforce_budget(
            unpaired,
            cfg.budget_per_robot_task,
            cfg.budget_mode,
            derive_seed(cfg.seed, "compose/unpaired", 0),
        )?;
        unpaired_ids = budgeted.ids();
        let surviving: BTreeSet<&String> = unpaired_ids.iter().collect();
        unpaired_weights = unpaired_flatten
            .iter()
            .filter(|(id, _)| surviving.contains(id))
            .cloned()
            .collect();
        if unpaired_weights.len() != unpaired_ids.len() {
            return Err(Error::Config(
                "flatten weights do not cover the budgeted unpaired pool".to_string(),
            ));
        }
        let total: f64 = unpaired_weights.iter().map(|(_, w)| w).sum();
        for (_, w) in unpaired_weights.iter_mut() {
            *w /= total;
        }
        provenance.insert(
            "unpaired".to_string(),
            format!("{flatten_label}(deficient_groups={})", deficient.len()),
        );
    }

    let manifest = MixtureManifest {
        target_ids: target_budgeted.ids(),
        paired_ids,
        unpaired_ids,
        unpaired_weights,
        config: *cfg,
        provenance,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Stream a batch entry was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamLabel {
    Target,
    Unpaired,
    Paired,
}

/// Per-batch entry counts, fixed across every batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCounts {
    pub target: usize,
    pub unpaired: usize,
    pub paired: usize,
}

impl StreamCounts {
    pub fn source_per_batch(&self) -> usize {
        self.unpaired + self.paired
    }
}

/// Largest-remainder rounding of the configured ratios into per-batch
/// counts. Errors when rounding would zero out a stream whose
/// configured fraction is positive.
pub fn stream_counts(cfg: &MixtureConfig) -> Result<StreamCounts> {
    let b = cfg.batch_size as f64;
    let quotas = [
        cfg.target_fraction * b,
        (1.0 - cfg.target_fraction) * cfg.source_unpaired_fraction * b,
        (1.0 - cfg.target_fraction) * (1.0 - cfg.source_unpaired_fraction) * b,
    ];
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut fractional: Vec<(usize, f64)> = quotas
        .iter()
        .enumerate()
        .map(|(i, q)| (i, q - q.floor()))
        .collect();
    // Largest remainder first; ties resolve in stream order
    // (target, unpaired, paired).
    fractional.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..(cfg.batch_size - assigned) {
        counts[fractional[k % 3].0] += 1;
    }

    let result = StreamCounts {
        target: counts[0],
        unpaired: counts[1],
        paired: counts[2],
    };
    let names = ["target", "unpaired", "paired"];
    for (i, &q) in quotas.iter().enumerate() {
        if q > 0.0 && counts[i] == 0 {
            return Err(Error::Schedule(format!(
                "batch_size {} rounds the {} stream to zero entries (quota {q:.3}); \
                 use a larger batch_size",
                cfg.batch_size, names[i]
            )));
        }
    }
    Ok(result)
}

/// Shuffled cycling without replacement: a fresh shuffle at each epoch
/// start, then pops until exhausted; reshuffles mid-epoch only when the
/// list runs dry.
struct CyclingSampler {
    ids: Vec<String>,
    queue: Vec<String>,
}

impl CyclingSampler {
    fn new(ids: &[String]) -> Self {
        CyclingSampler {
            ids: ids.to_vec(),
            queue: Vec::new(),
        }
    }

    fn start_epoch(&mut self, rng: &mut DetRng) {
        self.queue = self.ids.clone();
        shuffle(&mut self.queue, rng);
    }

    fn next(&mut self, rng: &mut DetRng) -> String {
        if self.queue.is_empty() {
            self.start_epoch(rng);
        }
        self.queue.pop().expect("non-empty ids")
    }
}

/// The frozen batch schedule for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub batch_size: usize,
    pub counts: StreamCounts,
    pub batches: Vec<Vec<(StreamLabel, String)>>,
    /// End index (exclusive) of each epoch in `batches`.
    pub epoch_boundaries: Vec<usize>,
}

/// Generate the deterministic batch schedule for a manifest.
///
/// Target and paired entries cycle without replacement per epoch;
/// unpaired entries are drawn with replacement under the manifest's
/// flattening weights. Every epoch sees exactly
/// `source_samples_per_epoch` source entries.
pub fn batch_schedule(manifest: &MixtureManifest, num_epochs: usize) -> Result<BatchSchedule> {
    manifest.validate()?;
    let cfg = &manifest.config;
    cfg.validate()?;
    if num_epochs == 0 {
        return Err(Error::Schedule("num_epochs must be >= 1".to_string()));
    }
    let counts = stream_counts(cfg)?;

    for (stream, count, ids) in [
        ("target", counts.target, &manifest.target_ids),
        ("unpaired", counts.unpaired, &manifest.unpaired_ids),
        ("paired", counts.paired, &manifest.paired_ids),
    ] {
        if count > 0 && ids.is_empty() {
            return Err(Error::Schedule(format!(
                "batch layout needs {count} {stream} entries per batch but the manifest's \
                 {stream} list is empty"
            )));
        }
    }

    let source_per_batch = counts.source_per_batch();
    let batches_per_epoch = if source_per_batch > 0 {
        if cfg.source_samples_per_epoch == 0
            || !cfg.source_samples_per_epoch.is_multiple_of(source_per_batch)
        {
            return Err(Error::Schedule(format!(
                "source_samples_per_epoch ({}) must be a positive multiple of the per-batch \
                 source count ({source_per_batch})",
                cfg.source_samples_per_epoch
            )));
        }
        cfg.source_samples_per_epoch / source_per_batch
    } else {
        // Target-only mixture: one pass over the target ids per epoch.
        manifest.target_ids.len().div_ceil(counts.target)
    };

    let mut target_rng = rng_from_seed(derive_seed(cfg.seed, "schedule/target", 0));
    let mut paired_rng = rng_from_seed(derive_seed(cfg.seed, "schedule/paired", 0));
    let mut unpaired_rng = rng_from_seed(derive_seed(cfg.seed, "schedule/unpaired", 0));

    let mut target_stream = CyclingSampler::new(&manifest.target_ids);
    let mut paired_stream = CyclingSampler::new(&manifest.paired_ids);
    let unpaired_sampler = if counts.unpaired > 0 {
        Some(WeightedSampler::new(&manifest.unpaired_weights)?)
    } else {
        None
    };

    let mut batches = Vec::with_capacity(num_epochs * batches_per_epoch);
    let mut epoch_boundaries = Vec::with_capacity(num_epochs);
    for _ in 0..num_epochs {
        if counts.target > 0 {
            target_stream.start_epoch(&mut target_rng);
        }
        if counts.paired > 0 {
            paired_stream.start_epoch(&mut paired_rng);
        }
        for _ in 0..batches_per_epoch {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..counts.target {
                batch.push((StreamLabel::Target, target_stream.next(&mut target_rng)));
            }
            if let Some(sampler) = &unpaired_sampler {
                for _ in 0..counts.unpaired {
                    batch.push((
                        StreamLabel::Unpaired,
                        sampler.sample(&mut unpaired_rng).to_string(),
                    ));
                }
            }
            for _ in 0..counts.paired {
                batch.push((StreamLabel::Paired, paired_stream.next(&mut paired_rng)));
            }
            batches.push(batch);
        }
        epoch_boundaries.push(batches.len());
    }

    Ok(BatchSchedule {
        batch_size: cfg.batch_size,
        counts,
        batches,
        epoch_boundaries,
    })
}
