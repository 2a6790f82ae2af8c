//! Counter-based seeding for independent random streams.
//!
//! A stream is identified by a tuple of integers (run seed, step, member, ...)
//! that is hashed into a ChaCha seed, so the numbers a member sees never
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a key tuple into a single 64-bit seed.
pub fn mix(key: &[u64]) -> u64 {
    key.iter()
        .fold(0x2545_F491_4F6C_DD1D, |h, k| splitmix(h ^ splitmix(*k)))
}

/// Independent generator for the stream named by `key`.
pub fn stream(key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(key))
}
