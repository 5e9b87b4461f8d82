//! Coverage binning, gap analysis, and budgeted selection.
//!
//! Demonstrations are binned along one of three domain-shift axes:
//! viewpoint (camera azimuth/elevation/focal bins), morphology
//! (platform and gripper class), or appearance (tag equality).
//! Selection is either targeted (fill bins the target occupies but
//! candidates under-cover) or diverse (stratify evenly across all
//! occupied bins), and large unpaired pools are reweighted so every
//! bin receives equal expected sampling mass.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, shuffle, DetRng};
use crate::trajectory::{Pool, Trajectory};

/// Binning rule along one domain-shift axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum BinSpec {
    Viewpoint {
        azimuth_bin_deg: f64,
        elevation_bin_deg: f64,
        focal_bin_mm: f64,
    },
    Morphology,
    Appearance,
}

impl BinSpec {
    /// Default viewpoint bins: azimuth 30 degrees, elevation 15 degrees
    /// (offset so bin edges fall at -90), focal length 10 mm.
    pub fn default_viewpoint() -> Self {
        BinSpec::Viewpoint {
            azimuth_bin_deg: 30.0,
            elevation_bin_deg: 15.0,
            focal_bin_mm: 10.0,
        }
    }

    pub fn axis_name(&self) -> &'static str {
        match self {
            BinSpec::Viewpoint { .. } => "viewpoint",
            BinSpec::Morphology => "morphology",
            BinSpec::Appearance => "appearance",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BinSpec::Viewpoint {
            azimuth_bin_deg,
            elevation_bin_deg,
            focal_bin_mm,
        } = self
        {
            if !(*azimuth_bin_deg > 0.0 && *elevation_bin_deg > 0.0 && *focal_bin_mm > 0.0) {
                return Err(Error::Config(
                    "viewpoint bin widths must be positive".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// A bin identity along one axis. Ordered so reports and tie-breaks are
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinKey {
    Viewpoint(i64, i64, i64),
    Morphology(String, String),
    Appearance(String),
}

impl fmt::Display for BinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinKey::Viewpoint(a, e, fo) => write!(f, "vp({a},{e},{fo})"),
            BinKey::Morphology(p, g) => write!(f, "morph({p},{g})"),
            BinKey::Appearance(t) => write!(f, "app({t})"),
        }
    }
}

/// Bin a trajectory. Total and deterministic for valid trajectories.
pub fn bin_of(t: &Trajectory, spec: &BinSpec) -> BinKey {
    match spec {
        BinSpec::Viewpoint {
            azimuth_bin_deg,
            elevation_bin_deg,
            focal_bin_mm,
        } => BinKey::Viewpoint(
            (t.camera.azimuth_deg / azimuth_bin_deg).floor() as i64,
            // Offset so bin edges fall at -90 degrees.
            ((t.camera.elevation_deg + 90.0) / elevation_bin_deg).floor() as i64,
            (t.camera.focal_mm / focal_bin_mm).floor() as i64,
        ),
        BinSpec::Morphology => BinKey::Morphology(
            t.embodiment.platform_class.clone(),
            t.embodiment.gripper_class.clone(),
        ),
        BinSpec::Appearance => BinKey::Appearance(t.appearance_tag.clone()),
    }
}

/// Demonstration counts per bin along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageHistogram {
    pub spec: BinSpec,
    pub counts: BTreeMap<BinKey, usize>,
}

impl CoverageHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Histogram a pool along one axis.
pub fn histogram(pool: &Pool, spec: &BinSpec) -> CoverageHistogram {
    let mut counts = BTreeMap::new();
    for t in &pool.trajectories {
        *counts.entry(bin_of(t, spec)).or_insert(0) += 1;
    }
    CoverageHistogram { spec: *spec, counts }
}

/// Per-bin deficits of a candidate pool relative to the bins the target
/// pool occupies, against a per-bin quota. Sorted by descending deficit,
/// ties in bin-key order.
pub fn coverage_gaps(
    target: &Pool,
    candidates: &Pool,
    spec: &BinSpec,
    quota: usize,
) -> Result<Vec<(BinKey, usize)>> {
    if target.is_empty() {
        return Err(Error::EmptyPool {
            pool: target.pool_id.clone(),
            context: ": coverage gaps need a non-empty target pool".to_string(),
        });
    }
    let reference = histogram(target, spec);
    let available = histogram(candidates, spec);
    let mut gaps: Vec<(BinKey, usize)> = reference
        .counts
        .keys()
        .map(|k| {
            let have = available.counts.get(k).copied().unwrap_or(0);
            (k.clone(), quota.saturating_sub(have))
        })
        .collect();
    gaps.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(gaps)
}

/// What a selection strategy produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub selected_ids: Vec<String>,
    pub strategy: String,
    pub budget: usize,
    pub per_bin_counts: Vec<(BinKey, usize)>,
}

impl SelectionReport {
    fn from_selection(
        strategy: &str,
        budget: usize,
        selected: Vec<String>,
        pool: &Pool,
        spec: &BinSpec,
    ) -> Self {
        let by_id = pool.index_by_id();
        let mut per_bin: BTreeMap<BinKey, usize> = BTreeMap::new();
        for id in &selected {
            if let Some(t) = by_id.get(id.as_str()) {
                *per_bin.entry(bin_of(t, spec)).or_insert(0) += 1;
            }
        }
        SelectionReport {
            selected_ids: selected,
            strategy: strategy.to_string(),
            budget,
            per_bin_counts: per_bin.into_iter().collect(),
        }
    }
}

fn group_by_bin<'a>(pool: &'a Pool, spec: &BinSpec) -> BTreeMap<BinKey, Vec<&'a Trajectory>> {
    let mut groups: BTreeMap<BinKey, Vec<&Trajectory>> = BTreeMap::new();
    for t in &pool.trajectories {
        groups.entry(bin_of(t, spec)).or_default().push(t);
    }
    for members in groups.values_mut() {
        members.sort_by(|a, b| a.trajectory_id.cmp(&b.trajectory_id));
    }
    groups
}

fn require_candidates(candidates: &Pool, op: &str) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyPool {
            pool: candidates.pool_id.clone(),
            context: format!(": {op} needs a non-empty candidate pool"),
        });
    }
    Ok(())
}

/// Targeted selection: fill the target-occupied bins with the largest
/// deficits first, round-robin, drawing uniformly without replacement
/// within each bin; leftover budget falls back to a uniform draw over
/// the remaining candidates.
pub fn select_targeted(
    candidates: &Pool,
    target: &Pool,
    spec: &BinSpec,
    budget: usize,
    seed: u64,
) -> Result<SelectionReport> {
    require_candidates(candidates, "targeted selection")?;
    if budget == 0 {
        return Err(Error::Config("selection budget must be >= 1".to_string()));
    }
    let reference_bins = histogram(target, spec).counts.len().max(1);
    let quota = budget.div_ceil(reference_bins);
    let gaps = coverage_gaps(target, candidates, spec, quota)?;

    let mut rng = rng_from_seed(seed);
    let groups = group_by_bin(candidates, spec);

    // Shuffled per-bin queues, visited in gap order.
    let mut queues: Vec<Vec<String>> = gaps
        .iter()
        .map(|(key, _)| {
            let mut ids: Vec<String> = groups
                .get(key)
                .map(|g| g.iter().map(|t| t.trajectory_id.clone()).collect())
                .unwrap_or_default();
            shuffle(&mut ids, &mut rng);
            ids
        })
        .collect();

    let mut selected = Vec::with_capacity(budget.min(candidates.len()));
    while selected.len() < budget && queues.iter().any(|q| !q.is_empty()) {
        for q in queues.iter_mut() {
            if selected.len() >= budget {
                break;
            }
            if let Some(id) = q.pop() {
                selected.push(id);
            }
        }
    }

    if selected.len() < budget {
        let chosen: std::collections::BTreeSet<&String> = selected.iter().collect();
        let mut leftover: Vec<String> = candidates
            .trajectories
            .iter()
            .map(|t| t.trajectory_id.clone())
            .filter(|id| !chosen.contains(id))
            .collect();
        leftover.sort();
        shuffle(&mut leftover, &mut rng);
        let need = budget - selected.len();
        selected.extend(leftover.into_iter().take(need));
    }

    Ok(SelectionReport::from_selection(
        "targeted", budget, selected, candidates, spec,
    ))
}

/// Diverse selection: stratify the budget as evenly as possible across
/// all occupied bins, redistributing overflow from under-populated bins
/// to the bins with the most remaining candidates.
pub fn select_diverse(
    candidates: &Pool,
    spec: &BinSpec,
    budget: usize,
    seed: u64,
) -> Result<SelectionReport> {
    require_candidates(candidates, "diverse selection")?;
    if budget == 0 {
        return Err(Error::Config("selection budget must be >= 1".to_string()));
    }
    let groups = group_by_bin(candidates, spec);
    let keys: Vec<BinKey> = groups.keys().cloned().collect();
    let n = keys.len();

    // Even split with the remainder handed out in bin-key order.
    let base = budget / n;
    let rem = budget % n;
    let mut alloc: Vec<usize> = (0..n).map(|i| base + usize::from(i < rem)).collect();

    // Cap at bin populations, then push overflow to the bins with the
    // most remaining capacity.
    let sizes: Vec<usize> = keys.iter().map(|k| groups[k].len()).collect();
    let mut overflow = 0usize;
    for i in 0..n {
        if alloc[i] > sizes[i] {
            overflow += alloc[i] - sizes[i];
            alloc[i] = sizes[i];
        }
    }
    while overflow > 0 {
        let best = (0..n)
            .filter(|&i| sizes[i] > alloc[i])
            .max_by_key(|&i| (sizes[i] - alloc[i], std::cmp::Reverse(keys[i].clone())));
        match best {
            Some(i) => {
                alloc[i] += 1;
                overflow -= 1;
            }
            None => break, // budget exceeds pool size
        }
    }

    let mut rng = rng_from_seed(seed);
    let mut selected = Vec::new();
    for (i, key) in keys.iter().enumerate() {
        let mut ids: Vec<String> = groups[key].iter().map(|t| t.trajectory_id.clone()).collect();
        shuffle(&mut ids, &mut rng);
        selected.extend(ids.into_iter().take(alloc[i]));
    }

    Ok(SelectionReport::from_selection(
        "diverse", budget, selected, candidates, spec,
    ))
}

/// Uniform selection across the whole candidate pool, no bin awareness.
pub fn select_uniform(candidates: &Pool, budget: usize, seed: u64) -> Result<SelectionReport> {
    require_candidates(candidates, "uniform selection")?;
    if budget == 0 {
        return Err(Error::Config("selection budget must be >= 1".to_string()));
    }
    let mut ids: Vec<String> = candidates
        .trajectories
        .iter()
        .map(|t| t.trajectory_id.clone())
        .collect();
    ids.sort();
    let mut rng = rng_from_seed(seed);
    shuffle(&mut ids, &mut rng);
    ids.truncate(budget.min(candidates.len()));
    Ok(SelectionReport {
        selected_ids: ids,
        strategy: "uniform".to_string(),
        budget,
        per_bin_counts: Vec::new(),
    })
}

/// Histogram-flattening weights: each trajectory's weight is the product
/// over the supplied axes of `1 / count(its bin)`, normalized to sum to
/// one. With a single axis, every occupied bin receives equal expected
/// sampling mass. Returned in pool order.
pub fn flatten_weights(pool: &Pool, specs: &[BinSpec]) -> Result<Vec<(String, f64)>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool {
            pool: pool.pool_id.clone(),
            context: ": flattening weights need a non-empty pool".to_string(),
        });
    }
    let histograms: Vec<CoverageHistogram> =
        specs.iter().map(|s| histogram(pool, s)).collect();
    let mut raw: Vec<(String, f64)> = pool
        .trajectories
        .iter()
        .map(|t| {
            let w: f64 = histograms
                .iter()
                .map(|h| 1.0 / h.counts[&bin_of(t, &h.spec)] as f64)
                .product();
            (t.trajectory_id.clone(), w)
        })
        .collect();
    let total: f64 = raw.iter().map(|(_, w)| w).sum();
    for (_, w) in raw.iter_mut() {
        *w /= total;
    }
    Ok(raw)
}

/// Draws ids with replacement under fixed probabilities via the
/// cumulative distribution.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    ids: Vec<String>,
    cumulative: Vec<f64>,
}

impl WeightedSampler {
    pub fn new(weights: &[(String, f64)]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config(
                "weighted sampler needs at least one id".to_string(),
            ));
        }
        let mut acc = 0.0;
        let mut ids = Vec::with_capacity(weights.len());
        let mut cumulative = Vec::with_capacity(weights.len());
        for (id, w) in weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::Config(format!(
                    "weight for '{id}' must be finite and non-negative, got {w}"
                )));
            }
            acc += w;
            ids.push(id.clone());
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::Config("weights must not all be zero".to_string()));
        }
        Ok(WeightedSampler { ids, cumulative })
    }

    pub fn sample(&self, rng: &mut DetRng) -> &str {
        let total = *self.cumulative.last().expect("non-empty");
        let u: f64 = rng.gen_range(0.0..total);
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.ids.len() - 1);
        &self.ids[idx]
    }
}
