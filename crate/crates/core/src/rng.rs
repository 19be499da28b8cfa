//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`]. Child
//! streams are derived from a root seed plus a list of labels so that
//! independent Monte-Carlo chunks can run in any order (or in parallel) and
//! still reproduce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Root generator for a 64-bit seed.
pub fn from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and an ordered list of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix(seed), |acc, &label| mix(acc ^ mix(label)))
}

/// Child generator; see [`derive_seed`].
pub fn substream(seed: u64, labels: &[u64]) -> SimRng {
    from_seed(derive_seed(seed, labels))
}

/// Stream labels used across the crate, kept distinct so that training,
/// validation and evaluation never share random draws.
pub mod label {
    pub const TRAIN: u64 = 0x7472_6169_6e00_0001;
    pub const VALIDATE: u64 = 0x7661_6c69_6400_0002;
    pub const SWEEP: u64 = 0x7377_6565_7000_0003;
    pub const DIAGNOSE: u64 = 0x6469_6167_6e00_0004;
    pub const CHECK: u64 = 0x6368_6563_6b00_0005;
}
