//! Deterministic random substreams.
//!
//! Every random draw in a search is taken from a stream keyed by
//! `(seed, tags...)`, so results do not depend on evaluation order or on how
//! work is split across threads.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream tags, one per consumer, so no two consumers share a stream.
pub mod tag {
    pub const RANDOM_SEARCH: u64 = 0x5253;
    pub const ZERO_ORDER_PIVOT: u64 = 0x5a50;
    pub const ZERO_ORDER_NEIGHBOR: u64 = 0x5a4e;
    pub const FIRST_ORDER: u64 = 0x464f;
    pub const PATHS_INIT: u64 = 0x5049;
    pub const PATHS_FORWARD: u64 = 0x5046;
    pub const FRECHET_GREEDY: u64 = 0x4647;
    pub const BASELINE: u64 = 0x424c;
    pub const REFERENCE: u64 = 0x5246;
    pub const SAMPLE: u64 = 0x534d;
    pub const FEATURES: u64 = 0x4645;
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a seed and a path of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    let mut acc = splitmix(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xd6e8_feb8_6659_fd93);
        acc ^= splitmix(&mut state);
        state = acc;
    }
    acc
}

/// An independent ChaCha stream for `(seed, tags...)`.
pub fn substream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// A noise vector `N(0, scale^2 I)`.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}
