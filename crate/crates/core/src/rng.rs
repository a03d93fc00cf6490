//! Seeded randomness. Every random draw in the crate comes from a
//! [`ChaCha8Rng`] derived from a root seed plus a stream name, so runs are
//! reproducible and independent components do not share streams.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

use crate::math::fnv1a64;

/// Root seed fanned out by name.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    let mut bytes = alloc::vec::Vec::with_capacity(8 + name.len());
    bytes.extend_from_slice(&root.to_le_bytes());
    bytes.extend_from_slice(name.as_bytes());
    fnv1a64(&bytes)
}

pub fn rng_for(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw (Box-Muller).
pub fn normal<R: rand::Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(2.0 * core::f64::consts::PI * u2)
}
