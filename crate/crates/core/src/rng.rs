//! Seed derivation and deterministic random number generation.
//!
//! Every random decision in the crate flows through a ChaCha8 stream
//! seeded from a 64-bit value. ChaCha is counter-based, so a given seed
//! produces the same sequence on every platform and thread count.
//! Sub-seeds are derived from a master seed with a splittable scheme
//! (SplitMix64 over a domain tag and an index), which lets independent
//! work items draw from independent streams in any order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used everywhere determinism matters.
pub type DetRng = ChaCha8Rng;

/// Build an RNG directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a master seed, a domain tag, and an index.
///
/// Distinct (domain, index) pairs give statistically independent streams;
/// the same triple always gives the same seed.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for &b in domain.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Seeded Fisher-Yates shuffle of a slice.
pub fn shuffle<T>(items: &mut [T], rng: &mut DetRng) {
    items.shuffle(rng);
}

/// Draw `k` distinct indices from `0..n` uniformly at random.
///
/// Returns all of `0..n` when `k >= n`. Output is sorted ascending so
/// callers that filter an ordered collection keep its order.
pub fn sample_indices(n: usize, k: usize, rng: &mut DetRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}
