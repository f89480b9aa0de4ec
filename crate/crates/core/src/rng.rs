//! Keyed random streams.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream id)`; draws
//! inside a stream are consumed in time order, so results do not depend on how
//! work is split across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream number `id` under `seed`.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Seed of replicate `rep` at grid size `n`, read at a fixed counter position.
pub fn replicate_seed(master: u64, n: usize, rep: usize) -> u64 {
    let mut rng = stream(master, n as u64);
    rng.set_word_pos(2 * rep as u128);
    rng.next_u64()
}
