//! Seed derivation. Every random draw in a run flows from one user seed;
//! stage-local seeds are a stable hash of (seed, stage name, index).

use rand::SeedableRng;
use rand_pcg::Pcg64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable across platforms and releases (FNV-1a over the stage name, mixed
/// with the seed through SplitMix64).
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(seed ^ splitmix64(h))
}

pub fn derive_indexed(seed: u64, stage: &str, index: u64) -> u64 {
    splitmix64(derive_seed(seed, stage) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}
