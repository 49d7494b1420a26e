//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha8 generator keyed by a
//! 64-bit seed plus a stream id naming its purpose. ChaCha is counter based,
//! so two purposes under the same seed never share output, and the draws for
//! one purpose do not depend on how many draws another purpose consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Signal = 1,
    Rotations = 2,
    Noise = 3,
    Hypercube = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer. A bijection on `u64`, so distinct inputs give
/// distinct outputs.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
