//! Seeded random streams. Every component draws from its own ChaCha stream
//! derived from the single run seed, so components can be re-seeded
//! independently without disturbing each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Sampling = 2,
    Folds = 3,
    Synthetic = 4,
    GradCheck = 5,
}

pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
