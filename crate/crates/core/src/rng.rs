//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit seed or generator. Independent
//! streams (Monte-Carlo chains, per-image pipeline jobs) are derived from a
//! root seed by adding the stream index: `stream_seed(root, i) = root + i`
//! (wrapping).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_seed(root: u64, index: u64) -> u64 {
    root.wrapping_add(index)
}

pub fn stream(root: u64, index: u64) -> Rng {
    seeded(stream_seed(root, index))
}
