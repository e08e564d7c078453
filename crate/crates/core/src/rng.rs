//! Named random streams derived from one master seed.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream id)`. Indexed
//! draws jump to a fixed word offset per index, so sample `i` always sees the same
//! numbers no matter how many samples come before it or which shard owns it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved for each indexed draw (2^20 32-bit words).
const INDEX_STRIDE_WORDS: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    DataX = 1,
    DataNoise = 2,
    DataLatent = 3,
    Init = 4,
    SolverNoise = 5,
    SolverLatent = 6,
    AgentLatent = 7,
    GroundTruth = 8,
    Participation = 9,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn indexed_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = stream_rng(seed, stream);
    rng.set_word_pos(index as u128 * INDEX_STRIDE_WORDS);
    rng
}
