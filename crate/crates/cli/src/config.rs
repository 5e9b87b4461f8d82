//! Declarative run configuration.
//!
//! One TOML document drives every subcommand. Unknown keys are
//! rejected. The top-level `seed` is the master seed: every stage seed
//! is derived from it deterministically, so a config (plus flag
//! overrides) fully determines every artifact byte.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use curate_core::coverage::BinSpec;
use curate_core::dtw::{DistanceWeights, PairingOptions, SegmentMode};
use curate_core::features::EventParams;
use curate_core::mixture::{BudgetMode, MixtureConfig};
use curate_core::rng::derive_seed;
use curate_core::strategies::SelectionStrategy;
use curate_core::synth::{CameraRanges, EmbodimentSpec, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; all stage seeds derive from it.
    pub seed: u64,
    /// Directory all artifacts are written to.
    pub out_dir: PathBuf,
    pub synth: SynthSection,
    pub features: FeatureSection,
    pub pairing: PairingSection,
    pub coverage: CoverageSection,
    pub select: SelectSection,
    pub mixture: MixtureSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("artifacts"),
            synth: SynthSection::default(),
            features: FeatureSection::default(),
            pairing: PairingSection::default(),
            coverage: CoverageSection::default(),
            select: SelectSection::default(),
            mixture: MixtureSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_base_motions: usize,
    pub num_unpaired_motions: usize,
    pub embodiments: Vec<EmbodimentSpec>,
    pub cameras_per_scene: usize,
    pub camera: CameraRanges,
    pub noise_sigma: f64,
    pub steps_per_trajectory: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        // Groups of 60 leave headroom over the default budget of 50.
        SynthSection {
            num_base_motions: 60,
            num_unpaired_motions: 60,
            embodiments: SynthConfig::default().embodiments,
            cameras_per_scene: 3,
            camera: CameraRanges::default(),
            noise_sigma: 0.01,
            steps_per_trajectory: 120,
        }
    }
}

impl SynthSection {
    pub fn to_synth_config(&self, master_seed: u64) -> SynthConfig {
        SynthConfig {
            num_base_motions: self.num_base_motions,
            num_unpaired_motions: self.num_unpaired_motions,
            embodiments: self.embodiments.clone(),
            cameras_per_scene: self.cameras_per_scene,
            camera: self.camera,
            noise_sigma: self.noise_sigma,
            steps_per_trajectory: self.steps_per_trajectory,
            seed: derive_seed(master_seed, "stage/gen", 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureSection {
    pub event: EventParams,
    pub resample_len: usize,
}

impl Default for FeatureSection {
    fn default() -> Self {
        FeatureSection {
            event: EventParams::default(),
            resample_len: curate_core::features::DEFAULT_RESAMPLE_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingSection {
    pub weights: DistanceWeights,
    pub segment: SegmentMode,
    pub band: Option<usize>,
    /// Include warp paths in the pairing artifact.
    pub export_paths: bool,
}

impl Default for PairingSection {
    fn default() -> Self {
        PairingSection {
            weights: DistanceWeights::default(),
            segment: SegmentMode::Approach,
            band: None,
            export_paths: false,
        }
    }
}

impl PairingSection {
    pub fn to_options(&self, resample_len: usize) -> PairingOptions {
        PairingOptions {
            weights: self.weights,
            segment: self.segment,
            resample_len,
            band: self.band,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSection {
    pub viewpoint: ViewpointBins,
    /// Axes reported by the coverage subcommand.
    pub axes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewpointBins {
    pub azimuth_bin_deg: f64,
    pub elevation_bin_deg: f64,
    pub focal_bin_mm: f64,
}

impl Default for ViewpointBins {
    fn default() -> Self {
        ViewpointBins {
            azimuth_bin_deg: 30.0,
            elevation_bin_deg: 15.0,
            focal_bin_mm: 10.0,
        }
    }
}

impl Default for CoverageSection {
    fn default() -> Self {
        CoverageSection {
            viewpoint: ViewpointBins::default(),
            axes: vec![
                "viewpoint".to_string(),
                "morphology".to_string(),
                "appearance".to_string(),
            ],
        }
    }
}

impl CoverageSection {
    pub fn viewpoint_spec(&self) -> BinSpec {
        BinSpec::Viewpoint {
            azimuth_bin_deg: self.viewpoint.azimuth_bin_deg,
            elevation_bin_deg: self.viewpoint.elevation_bin_deg,
            focal_bin_mm: self.viewpoint.focal_bin_mm,
        }
    }

    pub fn spec_for(&self, axis: &str) -> anyhow::Result<BinSpec> {
        match axis {
            "viewpoint" => Ok(self.viewpoint_spec()),
            "morphology" => Ok(BinSpec::Morphology),
            "appearance" => Ok(BinSpec::Appearance),
            other => bail!("coverage.axes: unknown axis '{other}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectSection {
    /// One of: uniform, targeted, task-paired, trajectory-paired.
    pub strategy: String,
    /// Axis used by the targeted strategy.
    pub targeted_axis: String,
    pub budget: usize,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection {
            strategy: "trajectory-paired".to_string(),
            targeted_axis: "morphology".to_string(),
            budget: 50,
        }
    }
}

impl SelectSection {
    pub fn strategy_from_name(
        &self,
        name: &str,
        coverage: &CoverageSection,
    ) -> anyhow::Result<SelectionStrategy> {
        Ok(match name {
            "uniform" => SelectionStrategy::Uniform,
            "targeted" => SelectionStrategy::Targeted {
                spec: coverage.spec_for(&self.targeted_axis)?,
            },
            "task-paired" => SelectionStrategy::TaskPaired,
            "trajectory-paired" => SelectionStrategy::TrajectoryPaired,
            other => bail!(
                "select.strategy: '{other}' is not one of uniform, targeted, task-paired, \
                 trajectory-paired"
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSection {
    pub target_fraction: f64,
    pub source_unpaired_fraction: f64,
    pub batch_size: usize,
    pub source_samples_per_epoch: usize,
    pub budget_per_robot_task: usize,
    pub budget_mode: BudgetMode,
    pub num_epochs: usize,
    /// Axes whose histograms the unpaired pool is flattened along.
    pub flatten_axes: Vec<String>,
}

impl Default for MixtureSection {
    fn default() -> Self {
        let m = MixtureConfig::default();
        MixtureSection {
            target_fraction: m.target_fraction,
            source_unpaired_fraction: m.source_unpaired_fraction,
            batch_size: m.batch_size,
            source_samples_per_epoch: m.source_samples_per_epoch,
            budget_per_robot_task: m.budget_per_robot_task,
            budget_mode: m.budget_mode,
            num_epochs: 2,
            flatten_axes: vec!["viewpoint".to_string(), "morphology".to_string()],
        }
    }
}

impl MixtureSection {
    pub fn to_mixture_config(&self, master_seed: u64) -> MixtureConfig {
        MixtureConfig {
            target_fraction: self.target_fraction,
            source_unpaired_fraction: self.source_unpaired_fraction,
            batch_size: self.batch_size,
            source_samples_per_epoch: self.source_samples_per_epoch,
            budget_per_robot_task: self.budget_per_robot_task,
            budget_mode: self.budget_mode,
            seed: derive_seed(master_seed, "stage/compose", 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<SelectionStrategy>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            budget: 50,
            seeds: vec![1, 2, 3],
            strategies: vec![
                SelectionStrategy::Uniform,
                SelectionStrategy::Diverse {
                    spec: BinSpec::Morphology,
                },
                SelectionStrategy::TaskPaired,
                SelectionStrategy::TrajectoryPaired,
            ],
        }
    }
}

impl RunConfig {
    /// Load from a TOML file. Any unknown key is a usage error naming
    /// the key.
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let synth = self.synth.to_synth_config(self.seed);
        synth.validate().context("synth")?;
        if self.synth.embodiments.len() < 2 {
            bail!("synth.embodiments: need at least 2 (target first, then sources)");
        }
        self.pairing.weights.validate().context("pairing.weights")?;
        if self.features.resample_len < 2 {
            bail!("features.resample_len: must be >= 2");
        }
        if !(self.features.event.close_threshold.is_finite()
            && (0.0..=1.0).contains(&self.features.event.close_threshold))
        {
            bail!("features.event.close_threshold: must be in [0, 1]");
        }
        if self.features.event.hold_steps == 0 {
            bail!("features.event.hold_steps: must be >= 1");
        }
        if !self.features.event.proximity_m.is_finite() || self.features.event.proximity_m <= 0.0 {
            bail!("features.event.proximity_m: must be > 0");
        }
        for axis in &self.coverage.axes {
            self.coverage.spec_for(axis)?;
        }
        self.coverage
            .viewpoint_spec()
            .validate()
            .map_err(|e| anyhow::anyhow!("coverage.viewpoint: {e}"))?;
        if self.select.budget == 0 {
            bail!("select.budget: must be >= 1");
        }
        self.select
            .strategy_from_name(&self.select.strategy, &self.coverage)?;
        self.mixture
            .to_mixture_config(self.seed)
            .validate()
            .map_err(|e| anyhow::anyhow!("mixture: {e}"))?;
        if self.mixture.num_epochs == 0 {
            bail!("mixture.num_epochs: must be >= 1");
        }
        for axis in &self.mixture.flatten_axes {
            self.coverage.spec_for(axis)?;
        }
        if self.eval.budget == 0 {
            bail!("eval.budget: must be >= 1");
        }
        if self.eval.seeds.is_empty() {
            bail!("eval.seeds: must list at least one seed");
        }
        if self.eval.strategies.len() < 2 {
            bail!("eval.strategies: need at least 2 strategies to compare");
        }
        Ok(())
    }

    /// Hash of the resolved configuration (canonical JSON, SHA-256).
    /// Stamped into every artifact so mixed-config artifacts are
    /// detectable. The artifact directory is excluded: it names where
    /// data lives, not what the data is.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
