//! Deterministic stream derivation: every episode consumes a ChaCha8 stream
//! keyed by (master seed, run index, episode index), so results do not depend
//! on scheduling or execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates consecutive key tuples.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// RNG stream for one episode of one run.
pub fn episode_stream(master_seed: u64, run_index: u64, episode_index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    let words = [
        mix(master_seed),
        mix(master_seed ^ mix(run_index)),
        mix(run_index ^ mix(episode_index)),
        mix(episode_index.wrapping_add(mix(master_seed ^ 0xa5a5_a5a5_a5a5_a5a5))),
    ];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Collapse an arbitrary key tuple into one u64 (for deriving per-cell seeds
/// in sweeps).
pub fn mix_key(parts: &[u64]) -> u64 {
    let mut acc = 0x243f6a8885a308d3u64;
    for &p in parts {
        acc = mix(acc ^ mix(p));
    }
    acc
}
