//! Seed derivation and deterministic RNG construction.
//!
//! Every random quantity in this crate flows from an explicit `u64` seed
//! through the functions below, so a run is a pure function of its seeds.
//! The mixing constants are fixed and documented here so that
//! alternate-language implementations can reproduce the exact streams:
//!
//! * `splitmix64(z)`: `z += 0x9E3779B97F4A7C15`, then
//!   `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
//!   `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`,
//!   `z ^= z >> 31` (all wrapping).
//! * `derive_seed(base, stream)` = `splitmix64(splitmix64(base) ^ (stream * 0xD1B54A32D192ED03))`.
//! * Generators are `ChaCha8` seeded with `seed_from_u64(derived)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit permutation.
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream index `stream` under `base`.
///
/// Distinct `(base, stream)` pairs map to distinct seeds with overwhelming
/// probability; used for per-cell, per-episode and per-attack streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(base) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Deterministic generator for a given seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_is_stable() {
        // Frozen values: any change here breaks reproducibility of archived runs.
        assert_eq!(splitmix64(0), 0xE220A8397B1DCDAF);
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(1, 3));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 2));
    }

    #[test]
    fn streams_are_distinct_across_cells() {
        let mut seen = std::collections::HashSet::new();
        for master in [0u64, 1, 42] {
            for cell in 0..1000u64 {
                assert!(seen.insert(derive_seed(master, cell)));
            }
        }
    }
}
