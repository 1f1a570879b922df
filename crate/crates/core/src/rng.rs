//! Deterministic, counter-based RNG streams. Every randomized component
//! (fold shuffles, penalty-level simulation draws, Monte-Carlo replications)
//! derives its generator from a base seed plus fixed stream labels, so results
//! are bit-identical across serial and parallel schedules.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; full-period bijective mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a stream counter.
pub fn stream_seed(base: u64, stream: u64) -> u64 {
    mix(mix(base).wrapping_add(stream))
}

/// Generator for stream `stream` of `base`.
pub fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(base, stream))
}

/// Generator for a two-level stream label (for example replication and stage).
pub fn stream_rng2(base: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(stream_seed(base, a), b))
}
