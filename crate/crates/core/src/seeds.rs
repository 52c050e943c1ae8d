//! Counter-based seed splitting.
//!
//! A stream is named by `(master, tag, index)`. Its seed is the SplitMix64
//! finalizer applied to a combination of the three, so any stream can be
//! derived directly without generating the ones before it, and adding new
//! tags never shifts existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a of the tag, so tags can be plain strings.
fn tag_hash(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed of stream `index` under `tag`:
/// `mix64(mix64(master ⊕ fnv1a(tag)) + γ·(index + 1))`.
pub fn stream_seed(master: u64, tag: &str, index: u64) -> u64 {
    let base = mix64(master ^ tag_hash(tag));
    mix64(base.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

pub fn stream_rng(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master, tag, index))
}
