//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`).
//! A root `u64` seed is expanded with `SeedableRng::seed_from_u64`, and
//! independent substreams are selected with ChaCha's 64-bit stream id, so
//! sample `i` of a dataset can be regenerated without drawing samples `0..i`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved for the model; dataset samples use their index.
pub const STREAM_INIT: u64 = u64::MAX - 1;
pub const STREAM_SHUFFLE: u64 = u64::MAX - 2;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a label into a seed so different consumers of one root seed do not
/// share streams (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
