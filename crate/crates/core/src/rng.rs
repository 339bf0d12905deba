//! Counter-addressed random streams.
//!
//! Every stochastic stage draws from a ChaCha8 stream selected by
//! `(seed, domain, index)`. Chunked work therefore reproduces the same numbers
//! no matter how chunks are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent purposes that must never share random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Source = 1,
    Sample = 2,
    Detector = 3,
    Darks = 4,
    Test = 15,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 4 bits of domain above a 60-bit chunk counter.
    rng.set_stream(((domain as u64) << 60) | (index & ((1 << 60) - 1)));
    rng
}
