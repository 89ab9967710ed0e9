//! Seeded random streams. Every stochastic stage owns its own generator,
//! derived from the experiment seed and a stream label.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha12Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Mix a base seed with a stream index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream))
}

/// Circular complex Gaussian with the given variance per quadrature.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var_per_quadrature: f64) -> Complex64 {
    let s = var_per_quadrature.sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Stream labels used by the pipeline.
pub mod streams {
    pub const SYMBOLS: u64 = 1;
    pub const CHANNEL: u64 = 2;
    pub const DETECT_SIGNAL: u64 = 3;
    pub const DETECT_VACUUM: u64 = 4;
    pub const DETECT_ELECTRONIC: u64 = 5;
    pub const WHITENING: u64 = 6;
    pub const SWEEP_BASE: u64 = 1 << 32;
}
