//! Seeded randomness. Every stochastic routine takes an explicit `u64` seed
//! and derives independent streams with [`substream`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer over `(seed, stream)`.
pub fn substream(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal<T: Real>(rng: &mut Rng) -> T {
    let v: f64 = StandardNormal.sample(rng);
    T::lit(v)
}

pub fn normal_vec<T: Real>(rng: &mut Rng, len: usize, scale: f64) -> Vec<T> {
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v * scale)
        })
        .collect()
}
