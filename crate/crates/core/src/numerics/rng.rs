//! Seeded random streams. Everything stochastic in the crate takes an
//! explicit `u64` seed and builds a [`SeededRng`] from it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable, reproducible generator used for every stochastic routine.
pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of indices into an independent stream
/// seed. Different paths give unrelated seeds.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use std::collections::HashSet;

    #[test]
    fn derived_seeds_are_distinct_over_a_grid() {
        let mut seen = HashSet::new();
        for i in 0..8 {
            for j in 0..4 {
                for r in 0..50 {
                    assert!(seen.insert(derive_seed(42, &[i, j, r])));
                }
            }
        }
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f64> = (0..5).map({
            let mut r = rng_from_seed(7);
            move |_| r.random::<f64>()
        }).collect();
        let mut r = rng_from_seed(7);
        let b: Vec<f64> = (0..5).map(|_| r.random::<f64>()).collect();
        assert_eq!(a, b);
    }
}
