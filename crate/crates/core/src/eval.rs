//! Training-free transfer surrogate.
//!
//! Measures how useful a curated source set is for a held-out target by
//! nearest-neighbor action retrieval: for every held-out feature step,
//! retrieve the closest curated source step and compare the source's
//! next-step end-effector displacement — rescaled by the ratio of
//! kinematic scales — against the target's true displacement. Retrieval
//! reads proprioceptive features only, so the metric isolates
//! action-level transfer (the morphology axis); perceptual axes are
//! covered by coverage-histogram assertions instead.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dtw::{step_distance, DistanceWeights, PairingOptions};
use crate::error::{Error, Result};
use crate::features::{extract_features, resample, EventParams, FeatureStep};
use crate::rng::derive_seed;
use crate::strategies::{apply_strategy, SelectionStrategy, StrategyContext};
use crate::synth::SynthWorld;
use crate::trajectory::{Pool, PoolRole, TaskKeypointMap, Trajectory};

/// Aggregate retrieval error for one curated source set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy_label: String,
    /// Mean of the per-trajectory errors (meters per step of
    /// end-effector displacement).
    pub mean_action_error: f64,
    pub per_trajectory_errors: Vec<f64>,
    pub num_queries: usize,
}

struct RetrievalKey {
    step: FeatureStep,
    displacement: [f64; 3],
    kinematic_scale: f64,
}

fn track_steps(
    t: &Trajectory,
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
    resample_len: usize,
) -> Result<Vec<FeatureStep>> {
    let full = extract_features(t, tasks, params)?;
    if full.len() < 2 {
        return Err(Error::TrackTooShort {
            trajectory_id: t.trajectory_id.clone(),
            len: full.len(),
        });
    }
    Ok(resample(&full, resample_len)?.steps)
}

/// Nearest-neighbor action retrieval error of a curated source set on a
/// held-out target pool.
///
/// The held-out pool must be disjoint from any target data used to
/// select the curated set. Every step except the last of every resampled
/// track is a query; each retrieval key carries its source's next-step
/// displacement and kinematic scale.
#[allow(clippy::too_many_arguments)]
pub fn retrieval_error(
    heldout: &Pool,
    curated_ids: &[String],
    source_pools: &[&Pool],
    tasks: Option<&TaskKeypointMap>,
    params: &EventParams,
    weights: &DistanceWeights,
    resample_len: usize,
    strategy_label: &str,
) -> Result<EvalReport> {
    if curated_ids.is_empty() {
        return Err(Error::EmptyPool {
            pool: "curated_source".to_string(),
            context: ": retrieval needs at least one curated trajectory".to_string(),
        });
    }
    if heldout.is_empty() {
        return Err(Error::EmptyPool {
            pool: heldout.pool_id.clone(),
            context: ": retrieval needs held-out queries".to_string(),
        });
    }

    let by_id: std::collections::BTreeMap<&str, &Trajectory> = source_pools
        .iter()
        .flat_map(|p| p.index_by_id())
        .collect();
    let mut keys: Vec<RetrievalKey> = Vec::new();
    for id in curated_ids {
        let t = *by_id.get(id.as_str()).ok_or_else(|| {
            Error::Config(format!("curated id '{id}' not found in the source pools"))
        })?;
        let steps = track_steps(t, tasks, params, resample_len)?;
        let scale = t.embodiment.kinematic_scale;
        for j in 0..steps.len() - 1 {
            keys.push(RetrievalKey {
                step: steps[j].clone(),
                displacement: crate::geom::sub(steps[j + 1].position, steps[j].position),
                kinematic_scale: scale,
            });
        }
    }

    let eval_one = |t: &Trajectory| -> Result<(f64, usize)> {
        let steps = track_steps(t, tasks, params, resample_len)?;
        let target_scale = t.embodiment.kinematic_scale;
        let mut total = 0.0;
        let n = steps.len() - 1;
        for i in 0..n {
            let query = &steps[i];
            let truth = crate::geom::sub(steps[i + 1].position, steps[i].position);
            let mut best_d = f64::INFINITY;
            let mut best_key = &keys[0];
            for key in &keys {
                let d = step_distance(query, &key.step, weights);
                if d < best_d {
                    best_d = d;
                    best_key = key;
                }
            }
            let ratio = target_scale / best_key.kinematic_scale;
            let predicted = crate::geom::scale(best_key.displacement, ratio);
            total += crate::geom::dist(predicted, truth);
        }
        Ok((total / n as f64, n))
    };

    #[cfg(feature = "parallel")]
    let per: Vec<(f64, usize)> = heldout
        .trajectories
        .par_iter()
        .map(eval_one)
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per: Vec<(f64, usize)> = heldout
        .trajectories
        .iter()
        .map(eval_one)
        .collect::<Result<_>>()?;

    let per_trajectory_errors: Vec<f64> = per.iter().map(|(e, _)| *e).collect();
    let num_queries = per.iter().map(|(_, n)| n).sum();
    let mean_action_error =
        per_trajectory_errors.iter().sum::<f64>() / per_trajectory_errors.len() as f64;

    Ok(EvalReport {
        strategy_label: strategy_label.to_string(),
        mean_action_error,
        per_trajectory_errors,
        num_queries,
    })
}

/// One row of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRun {
    pub strategy_label: String,
    pub seed: u64,
    pub report: EvalReport,
}

/// Run every strategy against the same world, budget, and held-out
/// queries, once per seed.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    world: &SynthWorld,
    strategies: &[(String, SelectionStrategy)],
    budget: usize,
    seeds: &[u64],
    params: &EventParams,
    pairing: &PairingOptions,
    weights: &DistanceWeights,
    resample_len: usize,
) -> Result<Vec<StrategyRun>> {
    if strategies.len() < 2 {
        return Err(Error::Config(
            "compare_strategies needs at least 2 strategies".to_string(),
        ));
    }
    let mut all: Vec<Trajectory> = world.paired_sources.trajectories.clone();
    all.extend(world.unpaired_sources.trajectories.clone());
    let candidates = Pool::new("candidates", PoolRole::SourceUnpaired, all);
    let ctx = StrategyContext {
        target: &world.target,
        candidates: &candidates,
        tasks: Some(&world.task_keypoints),
        event_params: params,
        pairing,
    };
    let source_pools = [&candidates];

    let mut rows = Vec::with_capacity(strategies.len() * seeds.len());
    for &seed in seeds {
        for (label, strategy) in strategies {
            let selection_seed = derive_seed(seed, "eval/select", 0);
            let ids = apply_strategy(strategy, &ctx, budget, selection_seed)?;
            let report = retrieval_error(
                &world.heldout_targets,
                &ids,
                &source_pools,
                Some(&world.task_keypoints),
                params,
                weights,
                resample_len,
                label,
            )?;
            rows.push(StrategyRun {
                strategy_label: label.clone(),
                seed,
                report,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coverage::{histogram, BinSpec};
    use crate::synth::{generate_pools, EmbodimentSpec, SynthConfig};
    use crate::trajectory::EmbodimentDescriptor;

    fn spec(id: &str, scale: f64) -> EmbodimentSpec {
        EmbodimentSpec {
            descriptor: EmbodimentDescriptor {
                embodiment_id: id.to_string(),
                platform_class: format!("platform_{id}"),
                gripper_class: "parallel".to_string(),
                kinematic_scale: scale,
                gripper_aperture_range: None,
            },
            rigid_offset: [0.0, 0.0, 0.0],
            gripper_timing_offset: 0,
        }
    }

    fn world(noise: f64, source_scale: f64, seed: u64) -> SynthWorld {
        let cfg = SynthConfig {
            num_base_motions: 6,
            num_unpaired_motions: 8,
            embodiments: vec![spec("tgt", 1.0), spec("src", source_scale)],
            noise_sigma: noise,
            steps_per_trajectory: 60,
            seed,
            ..SynthConfig::default()
        };
        generate_pools(&cfg).unwrap()
    }

    fn run(
        world: &SynthWorld,
        curated: &[String],
        pools: &[&Pool],
        label: &str,
    ) -> EvalReport {
        retrieval_error(
            &world.heldout_targets,
            curated,
            pools,
            Some(&world.task_keypoints),
            &EventParams::default(),
            &DistanceWeights::default(),
            50,
            label,
        )
        .unwrap()
    }

    #[test]
    fn self_retrieval_has_zero_error() {
        let w = world(0.01, 1.5, 3);
        let ids = w.heldout_targets.ids();
        let pools = [&w.heldout_targets];
        let report = run(&w, &ids, &pools, "self");
        assert!(report.mean_action_error < 1e-12);
        assert_eq!(
            report.per_trajectory_errors.len(),
            w.heldout_targets.len()
        );
        assert_eq!(report.num_queries, w.heldout_targets.len() * 49);
    }

    #[test]
    fn matched_source_at_zero_noise_and_unit_ratio_is_exact() {
        // Source differs in platform identity but not scale: the
        // generator then produces identical displacement fields, and
        // rescaling by the (unit) scale ratio reproduces them exactly.
        let w = world(0.0, 1.0, 4);
        let ids = w.paired_sources.ids();
        let pools = [&w.paired_sources];
        let report = run(&w, &ids, &pools, "matched");
        assert!(
            report.mean_action_error < 1e-12,
            "error {}",
            report.mean_action_error
        );
    }

    #[test]
    fn unrelated_sources_are_strictly_worse_than_matched() {
        let w = world(0.0, 1.5, 5);
        let matched = run(&w, &w.paired_sources.ids(), &[&w.paired_sources], "m");
        let unrelated = run(&w, &w.unpaired_sources.ids(), &[&w.unpaired_sources], "u");
        assert!(
            matched.mean_action_error < unrelated.mean_action_error,
            "matched {} vs unrelated {}",
            matched.mean_action_error,
            unrelated.mean_action_error
        );
    }

    #[test]
    fn rescaling_by_kinematic_ratio_helps_matched_sources() {
        // With a 1.5x source, errors stay small relative to the raw
        // displacement magnitudes, and the mean equals the mean of the
        // per-trajectory errors.
        let w = world(0.0, 1.5, 6);
        let report = run(&w, &w.paired_sources.ids(), &[&w.paired_sources], "m");
        let mean: f64 = report.per_trajectory_errors.iter().sum::<f64>()
            / report.per_trajectory_errors.len() as f64;
        assert!((report.mean_action_error - mean).abs() < 1e-15);
        assert!(report.per_trajectory_errors.iter().all(|e| *e >= 0.0));
    }

    #[test]
    fn adding_sources_never_increases_error() {
        // Noise-free, equal-scale world: the matched sources contain an
        // exact-match key for every query, so growing the curated set
        // can only keep or lower the mean error. (With noise, a new key
        // can sit closer in feature space yet carry a worse
        // displacement, so the guarantee is statistical, not pointwise.)
        let w = world(0.0, 1.0, 7);
        let mut all: Vec<Trajectory> = w.paired_sources.trajectories.clone();
        all.extend(w.unpaired_sources.trajectories.clone());
        let candidates = Pool::new("candidates", PoolRole::SourceUnpaired, all);
        let pools = [&candidates];

        let few: Vec<String> = w.paired_sources.ids().into_iter().take(3).collect();
        let matched = w.paired_sources.ids();
        let mut everything = matched.clone();
        everything.extend(w.unpaired_sources.ids());

        let e_few = run(&w, &few, &pools, "few").mean_action_error;
        let e_matched = run(&w, &matched, &pools, "matched").mean_action_error;
        let e_everything = run(&w, &everything, &pools, "everything").mean_action_error;
        assert!(e_few > 0.0);
        assert!(e_matched <= e_few);
        assert!(e_everything <= e_matched);
        assert!(e_everything < 1e-12);
    }

    #[test]
    fn retrieval_is_deterministic() {
        let w = world(0.01, 1.5, 8);
        let a = run(&w, &w.paired_sources.ids(), &[&w.paired_sources], "m");
        let b = run(&w, &w.paired_sources.ids(), &[&w.paired_sources], "m");
        assert_eq!(a, b);
    }

    #[test]
    fn camera_metadata_does_not_affect_retrieval() {
        // Identical embodiments, wildly different cameras: coverage
        // histograms see the difference, retrieval does not.
        let w = world(0.0, 1.0, 9);
        let report_a = run(&w, &w.paired_sources.ids(), &[&w.paired_sources], "a");

        let mut mutated = w.paired_sources.clone();
        for t in mutated.trajectories.iter_mut() {
            t.camera.azimuth_deg = 359.0;
            t.camera.elevation_deg = -89.0;
            t.camera.focal_mm = 300.0;
        }
        let report_b = run(&w, &mutated.ids(), &[&mutated], "b");
        assert_eq!(report_a.mean_action_error, report_b.mean_action_error);

        let spec = BinSpec::default_viewpoint();
        let h_a = histogram(&w.paired_sources, &spec);
        let h_b = histogram(&mutated, &spec);
        assert_ne!(h_a.counts, h_b.counts);
    }

    #[test]
    fn viewpoint_world_selections_differ_in_coverage_not_error_channels() {
        use crate::coverage::{select_diverse, select_targeted};
        use crate::trajectory::PoolRole;

        // Viewpoint-shift world: embodiments identical, cameras varied.
        let w = world(0.0, 1.0, 12);
        let mut all: Vec<Trajectory> = w.paired_sources.trajectories.clone();
        all.extend(w.unpaired_sources.trajectories.clone());
        let candidates = Pool::new("candidates", PoolRole::SourceUnpaired, all);

        let spec = BinSpec::default_viewpoint();
        let targeted = select_targeted(&candidates, &w.target, &spec, 6, 5).unwrap();
        let diverse = select_diverse(&candidates, &spec, 6, 5).unwrap();
        // Target-aware and target-unaware selection land in different
        // bins on this world.
        assert_ne!(targeted.per_bin_counts, diverse.per_bin_counts);

        // Retrieval reads proprioceptive features only, so two curated
        // sets covering the same motions score identically regardless
        // of which cameras observed them. The paired sources and the
        // camera-mutated copy above already pin that; here we check the
        // selections themselves produce finite, comparable reports.
        let pools = [&candidates];
        let r_t = run(&w, &targeted.selected_ids, &pools, "targeted");
        let r_d = run(&w, &diverse.selected_ids, &pools, "diverse");
        assert!(r_t.mean_action_error.is_finite());
        assert!(r_d.mean_action_error.is_finite());
    }

    #[test]
    fn full_pool_dominates_budget_limited_strategies() {
        let w = world(0.01, 1.5, 10);
        let strategies = vec![
            (
                "diverse".to_string(),
                SelectionStrategy::Diverse {
                    spec: BinSpec::Morphology,
                },
            ),
            ("full".to_string(), SelectionStrategy::FullPool),
        ];
        let rows = compare_strategies(
            &w,
            &strategies,
            4,
            &[1],
            &EventParams::default(),
            &PairingOptions::default(),
            &DistanceWeights::default(),
            50,
        )
        .unwrap();
        let diverse = rows.iter().find(|r| r.strategy_label == "diverse").unwrap();
        let full = rows.iter().find(|r| r.strategy_label == "full").unwrap();
        assert!(full.report.mean_action_error <= diverse.report.mean_action_error + 1e-15);
    }

    #[test]
    fn compare_strategies_is_reproducible_and_needs_two() {
        let w = world(0.01, 1.5, 11);
        let strategies = vec![
            ("uniform".to_string(), SelectionStrategy::Uniform),
            ("paired".to_string(), SelectionStrategy::TrajectoryPaired),
        ];
        let args = (
            &EventParams::default(),
            &PairingOptions::default(),
            &DistanceWeights::default(),
        );
        let a = compare_strategies(&w, &strategies, 5, &[1, 2], args.0, args.1, args.2, 50)
            .unwrap();
        let b = compare_strategies(&w, &strategies, 5, &[1, 2], args.0, args.1, args.2, 50)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);

        let single = vec![("uniform".to_string(), SelectionStrategy::Uniform)];
        assert!(compare_strategies(&w, &single, 5, &[1], args.0, args.1, args.2, 50).is_err());
    }
}
