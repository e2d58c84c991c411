use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::nn::scalar::Scalar;

/// Independent generator for one named parameter.
///
/// Seeding per name keeps every tensor's initial value independent of which
/// other modules exist, so a model built without some heads initializes its
/// shared parameters identically to the full model.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a over the name, mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&h.to_le_bytes());
    key[16..24].copy_from_slice(&(name.len() as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Normal(0, std) samples truncated to ±2·std by rejection.
pub fn trunc_normal<F: Scalar, R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<F> {
    let normal = Normal::new(0.0, std).expect("std > 0");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break F::from_f64(v);
            }
        })
        .collect()
}

pub const INIT_STD: f64 = 0.02;
