//! Deterministic seed derivation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; turns structured counters into well-mixed seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` derived from `root`. Distinct streams of the same
/// root never collide for practical counts.
pub fn derive(root: u64, stream: u64) -> u64 {
    mix(mix(root) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seeds handed to users and config files stay below 2^53 so they survive
/// TOML integers and JSON doubles unchanged.
pub const MAX_PORTABLE_SEED: u64 = (1 << 53) - 1;

/// Seed of ensemble member `index` under `root`.
pub fn member_seed(root: u64, index: usize) -> u64 {
    derive(root, 0x454E_5345_0000_0000 | index as u64) & MAX_PORTABLE_SEED
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn member_seeds_are_distinct() {
        let seeds: HashSet<u64> = (0..64).map(|i| member_seed(7, i)).collect();
        assert_eq!(seeds.len(), 64);
        assert_eq!(member_seed(7, 3), member_seed(7, 3));
    }
}
