//! Subcommand implementations and artifact plumbing.
//!
//! Every artifact is a line-delimited record file whose first record is
//! a `header.v1` stamp (artifact kind, config hash, master seed, tool
//! version). Stages that consume artifacts verify the stamp against the
//! current config and refuse to mix hashes unless `--force` is given.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use curate_core::coverage::{coverage_gaps, flatten_weights, histogram, BinKey};
use curate_core::dtw::pair_tracks;
use curate_core::error::Error as CoreError;
use curate_core::eval::compare_strategies;
use curate_core::features::{approach_segment, extract_features, resample, FeatureTrack};
use curate_core::mixture::{batch_schedule, compose, MixtureConfig, StreamCounts, StreamLabel};
use curate_core::records::{
    self, record_line, HeaderRecord, HEADER_SCHEMA,
};
use curate_core::rng::derive_seed;
use curate_core::strategies::{apply_strategy, StrategyContext};
use curate_core::synth::{generate_pools, SynthWorld, SYNTH_KEYPOINT_ID, SYNTH_TASK_ID};
use curate_core::trajectory::{Pool, PoolRole, TaskKeypointMap, Trajectory};

use crate::config::RunConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Usage/config problems exit 1; data problems exit 2.
#[derive(Debug)]
pub enum StageError {
    Usage(String),
    Data(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Usage(_) => 1,
            StageError::Data(_) => 2,
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageError::Usage(m) | StageError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for StageError {}

impl From<CoreError> for StageError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => StageError::Usage(e.to_string()),
            other => StageError::Data(other.to_string()),
        }
    }
}

type StageResult<T> = Result<T, StageError>;

fn data(msg: impl Into<String>) -> StageError {
    StageError::Data(msg.into())
}

/// Resolved run context shared by all stages.
pub struct Ctx {
    pub config: RunConfig,
    pub config_hash: String,
    pub force: bool,
}

impl Ctx {
    pub fn new(config: RunConfig, force: bool) -> Self {
        let config_hash = config.hash();
        Ctx {
            config,
            config_hash,
            force,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    fn header(&self, kind: &str) -> HeaderRecord {
        HeaderRecord {
            kind: kind.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.config.seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    fn write_artifact(&self, rel: &str, kind: &str, payload: Vec<String>) -> StageResult<()> {
        let mut lines = Vec::with_capacity(payload.len() + 1);
        lines.push(record_line(HEADER_SCHEMA, &self.header(kind)));
        lines.extend(payload);
        records::write_lines(&self.path(rel), &lines)?;
        Ok(())
    }

    /// Read an artifact, returning its payload lines (header stripped).
    fn read_artifact(&self, rel: &str, kind: &str, producer: &str) -> StageResult<Vec<String>> {
        let path = self.path(rel);
        if !path.exists() {
            return Err(data(format!(
                "missing input artifact {}; run `curate {producer}` first",
                path.display()
            )));
        }
        let mut lines = records::read_lines(&path)?;
        if lines.is_empty() {
            return Err(data(format!("{}: empty artifact", path.display())));
        }
        let header: HeaderRecord = records::parse_record(&lines[0], HEADER_SCHEMA)
            .map_err(|reason| data(format!("{}: {reason}", path.display())))?;
        if header.kind != kind {
            return Err(data(format!(
                "{}: artifact kind '{}' where '{kind}' expected",
                path.display(),
                header.kind
            )));
        }
        if header.config_hash != self.config_hash && !self.force {
            return Err(data(format!(
                "{}: produced by config {} but the current config hashes to {}; \
                 regenerate upstream artifacts or pass --force to mix",
                path.display(),
                header.config_hash,
                self.config_hash
            )));
        }
        lines.remove(0);
        Ok(lines)
    }

    fn read_pool(&self, rel: &str, pool_id: &str, role: PoolRole) -> StageResult<Pool> {
        let lines = self.read_artifact(rel, "pool", "gen")?;
        let tasks = synth_task_map();
        let outcome = records::pool_from_lines(
            &lines,
            1,
            &self.path(rel).display().to_string(),
            pool_id,
            role,
            Some(&tasks),
        )?;
        for r in &outcome.rejections {
            eprintln!("{}: line {}: {}", self.path(rel).display(), r.line, r.reason);
        }
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        Ok(outcome.pool)
    }
}

fn synth_task_map() -> TaskKeypointMap {
    let mut map = TaskKeypointMap::new();
    map.insert(
        SYNTH_TASK_ID.to_string(),
        [SYNTH_KEYPOINT_ID.to_string()].into_iter().collect(),
    );
    map
}

const POOL_FILES: [(&str, &str, PoolRole); 4] = [
    ("pools/target.jsonl", "target", PoolRole::TargetFewShot),
    (
        "pools/source_paired.jsonl",
        "source_paired",
        PoolRole::SourcePairedCandidates,
    ),
    (
        "pools/source_unpaired.jsonl",
        "source_unpaired",
        PoolRole::SourceUnpaired,
    ),
    ("pools/heldout.jsonl", "heldout", PoolRole::TargetFewShot),
];

const FEATURE_FILES: [(&str, &str); 4] = [
    ("features/target.jsonl", "pools/target.jsonl"),
    ("features/source_paired.jsonl", "pools/source_paired.jsonl"),
    ("features/source_unpaired.jsonl", "pools/source_unpaired.jsonl"),
    ("features/heldout.jsonl", "pools/heldout.jsonl"),
];

// ---------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------

pub fn cmd_gen(ctx: &Ctx) -> StageResult<()> {
    let synth_cfg = ctx.config.synth.to_synth_config(ctx.config.seed);
    let world = generate_pools(&synth_cfg)?;

    let pools = [
        ("pools/target.jsonl", &world.target),
        ("pools/source_paired.jsonl", &world.paired_sources),
        ("pools/source_unpaired.jsonl", &world.unpaired_sources),
        ("pools/heldout.jsonl", &world.heldout_targets),
    ];
    for (rel, pool) in pools {
        let payload = pool
            .trajectories
            .iter()
            .map(|t| record_line(records::TRAJECTORY_SCHEMA, t))
            .collect();
        ctx.write_artifact(rel, "pool", payload)?;
        println!("wrote {:<32} {:>5} trajectories", rel, pool.len());
    }

    let gt_payload = world
        .gt_pairs
        .iter()
        .map(|(t, s)| {
            record_line(
                records::GT_PAIR_SCHEMA,
                &serde_json::json!({"target_id": t, "source_id": s}),
            )
        })
        .collect();
    ctx.write_artifact("pools/gt_pairs.jsonl", "gt_pairs", gt_payload)?;
    println!(
        "wrote {:<32} {:>5} ground-truth pairs",
        "pools/gt_pairs.jsonl",
        world.gt_pairs.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------

pub fn cmd_featurize(ctx: &Ctx) -> StageResult<()> {
    let tasks = synth_task_map();
    for ((pool_rel, pool_id, role), (feat_rel, _)) in POOL_FILES.iter().zip(FEATURE_FILES.iter()) {
        let pool = ctx.read_pool(pool_rel, pool_id, *role)?;
        let tracks: Vec<FeatureTrack> = pool
            .trajectories
            .iter()
            .map(|t| extract_features(t, Some(&tasks), &ctx.config.features.event))
            .collect::<Result<_, _>>()?;
        let payload = tracks
            .iter()
            .map(|t| record_line(records::FEATURE_TRACK_SCHEMA, t))
            .collect();
        ctx.write_artifact(feat_rel, "features", payload)?;
        let with_event = tracks.iter().filter(|t| t.event_index.is_some()).count();
        println!(
            "wrote {:<32} {:>5} tracks ({} with grasp event)",
            feat_rel,
            tracks.len(),
            with_event
        );
    }
    Ok(())
}

fn read_tracks(ctx: &Ctx, rel: &str) -> StageResult<Vec<FeatureTrack>> {
    let lines = ctx.read_artifact(rel, "features", "featurize")?;
    Ok(records::feature_tracks_from_lines(
        &lines,
        1,
        &ctx.path(rel).display().to_string(),
    )?)
}

fn prepare_tracks(ctx: &Ctx, tracks: &[FeatureTrack]) -> StageResult<Vec<FeatureTrack>> {
    let cfg = &ctx.config;
    let approach = cfg.pairing.segment == curate_core::dtw::SegmentMode::Approach;
    let mut out = Vec::with_capacity(tracks.len());
    for track in tracks {
        let segment = if approach {
            approach_segment(track)
        } else {
            track.clone()
        };
        if segment.len() < 2 {
            out.push(segment);
        } else {
            out.push(resample(&segment, cfg.features.resample_len)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// pair
// ---------------------------------------------------------------------

pub fn cmd_pair(ctx: &Ctx) -> StageResult<()> {
    let targets = prepare_tracks(ctx, &read_tracks(ctx, "features/target.jsonl")?)?;
    let sources = prepare_tracks(ctx, &read_tracks(ctx, "features/source_paired.jsonl")?)?;
    let pairings = pair_tracks(
        &targets,
        &sources,
        &ctx.config.pairing.weights,
        ctx.config.pairing.band,
    )?;

    let include_path = ctx.config.pairing.export_paths;
    let payload = pairings
        .iter()
        .map(|p| {
            let rec = records::PairingRecord {
                target_id: p.target_id.clone(),
                source_id: p.source_id.clone(),
                cost: p.cost,
                path: include_path.then(|| p.path.pairs.clone()),
            };
            record_line(records::PAIRING_SCHEMA, &rec)
        })
        .collect();
    ctx.write_artifact("pairings.jsonl", "pairings", payload)?;

    let mean_cost = pairings.iter().map(|p| p.cost).sum::<f64>() / pairings.len().max(1) as f64;
    println!(
        "wrote {:<32} {:>5} pairs (mean DTW cost {mean_cost:.4})",
        "pairings.jsonl",
        pairings.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct HistogramBinRecord {
    pool_id: String,
    axis: String,
    bin: BinKey,
    count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CoverageGapRecord {
    axis: String,
    bin: BinKey,
    deficit: usize,
    quota: usize,
}

fn merged_sources(paired: &Pool, unpaired: &Pool) -> Pool {
    let mut all: Vec<Trajectory> = paired.trajectories.clone();
    all.extend(unpaired.trajectories.clone());
    Pool::new("candidates", PoolRole::SourceUnpaired, all)
}

pub fn cmd_coverage(ctx: &Ctx) -> StageResult<()> {
    let target = ctx.read_pool("pools/target.jsonl", "target", PoolRole::TargetFewShot)?;
    let paired = ctx.read_pool(
        "pools/source_paired.jsonl",
        "source_paired",
        PoolRole::SourcePairedCandidates,
    )?;
    let unpaired = ctx.read_pool(
        "pools/source_unpaired.jsonl",
        "source_unpaired",
        PoolRole::SourceUnpaired,
    )?;
    let candidates = merged_sources(&paired, &unpaired);

    let mut payload = Vec::new();
    println!("coverage ({} axes)", ctx.config.coverage.axes.len());
    for axis in &ctx.config.coverage.axes {
        let spec = ctx
            .config
            .coverage
            .spec_for(axis)
            .map_err(|e| StageError::Usage(e.to_string()))?;

        for pool in [&target, &candidates] {
            let hist = histogram(pool, &spec);
            for (bin, count) in &hist.counts {
                payload.push(record_line(
                    "histogram_bin.v1",
                    &HistogramBinRecord {
                        pool_id: pool.pool_id.clone(),
                        axis: axis.clone(),
                        bin: bin.clone(),
                        count: *count,
                    },
                ));
            }
        }

        let reference_bins = histogram(&target, &spec).counts.len().max(1);
        let quota = ctx.config.select.budget.div_ceil(reference_bins);
        let gaps = coverage_gaps(&target, &candidates, &spec, quota)?;
        println!("  axis {axis} (quota {quota} per target bin)");
        println!("    {:<28} {:>8}", "bin", "deficit");
        for (bin, deficit) in &gaps {
            println!("    {:<28} {:>8}", bin.to_string(), deficit);
            payload.push(record_line(
                "coverage_gap.v1",
                &CoverageGapRecord {
                    axis: axis.clone(),
                    bin: bin.clone(),
                    deficit: *deficit,
                    quota,
                },
            ));
        }
    }

    ctx.write_artifact("coverage.jsonl", "coverage", payload)?;
    println!("wrote coverage.jsonl");
    Ok(())
}

// ---------------------------------------------------------------------
// select
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SelectionRecord {
    strategy: String,
    budget: usize,
    selected_ids: Vec<String>,
}

pub fn cmd_select(ctx: &Ctx, strategy_override: Option<&str>) -> StageResult<()> {
    let cfg = &ctx.config;
    let name = strategy_override.unwrap_or(&cfg.select.strategy);
    let strategy = cfg
        .select
        .strategy_from_name(name, &cfg.coverage)
        .map_err(|e| StageError::Usage(e.to_string()))?;

    let target = ctx.read_pool("pools/target.jsonl", "target", PoolRole::TargetFewShot)?;
    let paired = ctx.read_pool(
        "pools/source_paired.jsonl",
        "source_paired",
        PoolRole::SourcePairedCandidates,
    )?;
    let unpaired = ctx.read_pool(
        "pools/source_unpaired.jsonl",
        "source_unpaired",
        PoolRole::SourceUnpaired,
    )?;
    let candidates = merged_sources(&paired, &unpaired);

    let tasks = synth_task_map();
    let pairing_opts = cfg.pairing.to_options(cfg.features.resample_len);
    let strat_ctx = StrategyContext {
        target: &target,
        candidates: &candidates,
        tasks: Some(&tasks),
        event_params: &cfg.features.event,
        pairing: &pairing_opts,
    };
    let seed = derive_seed(cfg.seed, "stage/select", 0);
    let ids = apply_strategy(&strategy, &strat_ctx, cfg.select.budget, seed)?;

    let payload = vec![record_line(
        "selection.v1",
        &SelectionRecord {
            strategy: name.to_string(),
            budget: cfg.select.budget,
            selected_ids: ids.clone(),
        },
    )];
    ctx.write_artifact("selection.jsonl", "selection", payload)?;

    // Bin distribution of the selection, per configured axis.
    let chosen: std::collections::BTreeSet<&String> = ids.iter().collect();
    let selected_pool = Pool::new(
        "selection",
        PoolRole::SourceUnpaired,
        candidates
            .trajectories
            .iter()
            .filter(|t| chosen.contains(&t.trajectory_id))
            .cloned()
            .collect(),
    );
    println!("selection ({name}, budget {}):", cfg.select.budget);
    for axis in &cfg.coverage.axes {
        let spec = cfg
            .coverage
            .spec_for(axis)
            .map_err(|e| StageError::Usage(e.to_string()))?;
        let hist = histogram(&selected_pool, &spec);
        println!("  axis {axis}");
        println!("    {:<28} {:>8}", "bin", "selected");
        for (bin, count) in &hist.counts {
            println!("    {:<28} {:>8}", bin.to_string(), count);
        }
    }
    println!(
        "wrote {:<32} {:>5} ids (strategy {name})",
        "selection.jsonl",
        ids.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// compose
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ManifestMetaRecord {
    config: MixtureConfig,
    provenance: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntryRecord {
    stream: StreamLabel,
    trajectory_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleMetaRecord {
    batch_size: usize,
    counts: StreamCounts,
    num_epochs: usize,
    epoch_boundaries: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchRecord {
    index: usize,
    entries: Vec<(StreamLabel, String)>,
}

pub fn cmd_compose(ctx: &Ctx) -> StageResult<()> {
    let cfg = &ctx.config;
    let target = ctx.read_pool("pools/target.jsonl", "target", PoolRole::TargetFewShot)?;
    let paired_pool = ctx.read_pool(
        "pools/source_paired.jsonl",
        "source_paired",
        PoolRole::SourcePairedCandidates,
    )?;
    let unpaired = ctx.read_pool(
        "pools/source_unpaired.jsonl",
        "source_unpaired",
        PoolRole::SourceUnpaired,
    )?;
    let pairing_lines = ctx.read_artifact("pairings.jsonl", "pairings", "pair")?;
    let pairings = records::pairings_from_lines(
        &pairing_lines,
        1,
        &ctx.path("pairings.jsonl").display().to_string(),
    )?;

    let flatten_specs: Vec<_> = cfg
        .mixture
        .flatten_axes
        .iter()
        .map(|axis| cfg.coverage.spec_for(axis))
        .collect::<Result<_, _>>()
        .map_err(|e| StageError::Usage(e.to_string()))?;
    let weights = flatten_weights(&unpaired, &flatten_specs)?;
    let flatten_label = format!("flattened[{}]", cfg.mixture.flatten_axes.join(","));

    let mixture_cfg = cfg.mixture.to_mixture_config(cfg.seed);
    let manifest = compose(
        &target,
        &pairings,
        &paired_pool,
        &unpaired,
        &weights,
        &flatten_label,
        &mixture_cfg,
    )?;

    let mut payload = vec![record_line(
        "manifest_meta.v1",
        &ManifestMetaRecord {
            config: manifest.config,
            provenance: manifest.provenance.clone(),
        },
    )];
    let weights_by_id: BTreeMap<&String, f64> = manifest
        .unpaired_weights
        .iter()
        .map(|(id, w)| (id, *w))
        .collect();
    for (stream, ids) in [
        (StreamLabel::Target, &manifest.target_ids),
        (StreamLabel::Paired, &manifest.paired_ids),
        (StreamLabel::Unpaired, &manifest.unpaired_ids),
    ] {
        for id in ids {
            payload.push(record_line(
                "manifest_entry.v1",
                &ManifestEntryRecord {
                    stream,
                    trajectory_id: id.clone(),
                    weight: weights_by_id.get(id).copied(),
                },
            ));
        }
    }
    ctx.write_artifact("manifest.jsonl", "manifest", payload)?;
    println!(
        "wrote {:<32} target {} / paired {} / unpaired {}",
        "manifest.jsonl",
        manifest.target_ids.len(),
        manifest.paired_ids.len(),
        manifest.unpaired_ids.len()
    );

    let schedule = batch_schedule(&manifest, cfg.mixture.num_epochs)?;
    let mut payload = vec![record_line(
        "schedule_meta.v1",
        &ScheduleMetaRecord {
            batch_size: schedule.batch_size,
            counts: schedule.counts,
            num_epochs: cfg.mixture.num_epochs,
            epoch_boundaries: schedule.epoch_boundaries.clone(),
        },
    )];
    for (index, entries) in schedule.batches.iter().enumerate() {
        payload.push(record_line(
            "batch.v1",
            &BatchRecord {
                index,
                entries: entries.clone(),
            },
        ));
    }
    ctx.write_artifact("schedule.jsonl", "schedule", payload)?;
    println!(
        "wrote {:<32} {:>5} batches ({} per epoch, {}t/{}u/{}p per batch)",
        "schedule.jsonl",
        schedule.batches.len(),
        schedule.batches.len() / cfg.mixture.num_epochs,
        schedule.counts.target,
        schedule.counts.unpaired,
        schedule.counts.paired,
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EvalRunRecord {
    strategy_label: String,
    seed: u64,
    mean_action_error: f64,
    num_queries: usize,
    per_trajectory_errors: Vec<f64>,
}

pub fn cmd_eval(ctx: &Ctx) -> StageResult<()> {
    let cfg = &ctx.config;
    let target = ctx.read_pool("pools/target.jsonl", "target", PoolRole::TargetFewShot)?;
    let paired = ctx.read_pool(
        "pools/source_paired.jsonl",
        "source_paired",
        PoolRole::SourcePairedCandidates,
    )?;
    let unpaired = ctx.read_pool(
        "pools/source_unpaired.jsonl",
        "source_unpaired",
        PoolRole::SourceUnpaired,
    )?;
    let heldout = ctx.read_pool("pools/heldout.jsonl", "heldout", PoolRole::TargetFewShot)?;
    let gt_lines = ctx.read_artifact("pools/gt_pairs.jsonl", "gt_pairs", "gen")?;
    let gt_pairs = records::gt_pairs_from_lines(
        &gt_lines,
        1,
        &ctx.path("pools/gt_pairs.jsonl").display().to_string(),
    )?;

    let world = SynthWorld {
        target,
        paired_sources: paired,
        unpaired_sources: unpaired,
        heldout_targets: heldout,
        gt_pairs,
        task_keypoints: synth_task_map(),
    };

    let strategies: Vec<(String, _)> = cfg
        .eval
        .strategies
        .iter()
        .map(|s| (s.label(), *s))
        .collect();
    let pairing_opts = cfg.pairing.to_options(cfg.features.resample_len);
    let rows = compare_strategies(
        &world,
        &strategies,
        cfg.eval.budget,
        &cfg.eval.seeds,
        &cfg.features.event,
        &pairing_opts,
        &cfg.pairing.weights,
        cfg.features.resample_len,
    )?;

    let payload = rows
        .iter()
        .map(|r| {
            record_line(
                "eval_run.v1",
                &EvalRunRecord {
                    strategy_label: r.strategy_label.clone(),
                    seed: r.seed,
                    mean_action_error: r.report.mean_action_error,
                    num_queries: r.report.num_queries,
                    per_trajectory_errors: r.report.per_trajectory_errors.clone(),
                },
            )
        })
        .collect();
    ctx.write_artifact("eval.jsonl", "eval", payload)?;

    println!("surrogate retrieval error (budget {})", cfg.eval.budget);
    println!("  {:<28} {:>8} {:>14}", "strategy", "seed", "mean error");
    let mut means: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        println!(
            "  {:<28} {:>8} {:>14.6}",
            r.strategy_label, r.seed, r.report.mean_action_error
        );
        let e = means.entry(&r.strategy_label).or_insert((0.0, 0));
        e.0 += r.report.mean_action_error;
        e.1 += 1;
    }
    println!("  {:<28} {:>8} {:>14}", "-- mean over seeds --", "", "");
    for (label, (sum, n)) in means {
        println!("  {:<28} {:>8} {:>14.6}", label, n, sum / n as f64);
    }
    println!("wrote eval.jsonl");
    Ok(())
}

// ---------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------

pub fn cmd_pipeline(ctx: &Ctx) -> StageResult<()> {
    cmd_gen(ctx)?;
    cmd_featurize(ctx)?;
    cmd_pair(ctx)?;
    cmd_coverage(ctx)?;
    cmd_select(ctx, None)?;
    cmd_compose(ctx)?;
    cmd_eval(ctx)?;
    println!("pipeline complete (config {})", ctx.config_hash);
    Ok(())
}
