//! Seedable pseudo-random source shared by the sampler and the tests.

use rand::SeedableRng;

pub use rand_xoshiro::Xoshiro256StarStar as RccRng;

/// Identifier recorded in sample manifests.
pub const RNG_ALGORITHM: &str = "xoshiro256**";

pub fn rng_from_seed(seed: u64) -> RccRng {
    RccRng::seed_from_u64(seed)
}
