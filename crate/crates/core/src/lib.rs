//! Demonstration-dataset curation for cross-embodiment robot learning.
//!
//! The crate turns heterogeneous demonstration pools into a curated,
//! replayable training mixture:
//!
//! - [`trajectory`] — demonstration, embodiment, and pool types with
//!   validation and a line-delimited record format ([`records`]);
//! - [`features`] — task-space feature tracks, grasp-event detection,
//!   approach segmentation, fixed-length resampling;
//! - [`dtw`] — dynamic-time-warping alignment and nearest-neighbor
//!   trajectory pairing across embodiments;
//! - [`coverage`] — viewpoint/morphology/appearance binning, gap
//!   analysis, targeted and diverse selection, histogram-flattening
//!   weights;
//! - [`mixture`] — per-(robot, task) budgets, mixture manifests, and
//!   deterministic batch schedules;
//! - [`synth`] — a procedural multi-embodiment world generator with
//!   ground-truth pairings;
//! - [`eval`] — a training-free retrieval surrogate for comparing
//!   selection strategies.
//!
//! Heavy inner loops (pairing, featurization, retrieval) run on rayon
//! when the default `parallel` feature is enabled and fall back to
//! sequential iteration without it; outputs are identical either way.

pub mod coverage;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod mixture;
pub mod records;
pub mod rng;
pub mod strategies;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};

/// Cap the worker-thread count for parallel sections. A no-op without
/// the `parallel` feature or if a global pool already exists.
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
    }
}
