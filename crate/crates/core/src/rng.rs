//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed, with the
//! ChaCha stream id selecting the purpose. Streams with distinct ids never
//! overlap, and the output is identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that draw from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Pool = 1,
    HeldOut = 2,
    MonteCarlo = 3,
    Surrogate = 4,
    RandomBaseline = 5,
    Model = 6,
    Oracle = 7,
}

/// Generator for `purpose` derived from `seed`.
pub fn stream(seed: u64, purpose: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// Generator for `purpose` with an additional sub-stream index (e.g. a repetition number).
pub fn substream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(purpose as u64);
    rng
}
