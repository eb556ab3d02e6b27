//! Seeded generators. Every stochastic routine takes an explicit seed; independent
//! streams (chains, Monte Carlo blocks) are derived from one master seed by
//! stream offsets of the ChaCha counter generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SpinRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> SpinRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> SpinRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
