//! Deterministic, independently keyed random streams.
//!
//! Every stochastic draw in the crate comes from a stream derived from the
//! experiment seed plus a tuple of keys (purpose, trajectory, epoch, ...), so
//! changing one consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `seed` and `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    let mut h = splitmix(seed);
    for k in keys {
        h = splitmix(h ^ splitmix(*k));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Stable key for a short purpose label.
pub fn key(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows x cols` matrix of independent standard normals, filled row-major.
pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| standard_normal(rng))
}
