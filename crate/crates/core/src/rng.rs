//! Seeded randomness. Every stochastic routine in the crate draws from a
//! xoshiro256++ stream keyed by an explicit `u64` seed, so results are
//! reproducible across runs and platforms.

use rand::SeedableRng;
pub use rand_xoshiro::Xoshiro256PlusPlus as Rng64;

pub fn seeded(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// Derives an independent-looking stream seed from a base seed and a tag
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
