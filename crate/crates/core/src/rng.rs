//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha stream keyed by a master
//! seed and a tuple of counters (path index, sample index, ...), so results
//! never depend on evaluation order or thread scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::spectral::{for_each_mode, SpectralField};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A generator determined entirely by `seed` and `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &k in keys {
        state = splitmix64(state ^ splitmix64(k.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(state.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Random real field with Gaussian coefficients damped by
/// `(1 + |k|²)^{-decay/2}`.
pub fn random_field(rng: &mut impl Rng, dim: usize, cutoff: usize, decay: f64) -> SpectralField {
    let mut coeffs = Vec::with_capacity((2 * cutoff + 1).pow(dim as u32));
    for_each_mode(dim, cutoff, |_, k| {
        let k2: i64 = k.iter().map(|v| v * v).sum();
        let w = (1.0 + k2 as f64).powf(-decay / 2.0);
        coeffs.push(Complex64::new(normal(rng), normal(rng)) * w);
    });
    SpectralField::from_coefficients(dim, cutoff, coeffs).expect("finite coefficients")
}
