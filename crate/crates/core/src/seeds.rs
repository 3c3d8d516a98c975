//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a 64-bit
//! seed and addressed by a stream id, so the stream consumed by a tree or a
//! node never depends on scheduling order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for the per-tree bootstrap draw. Node streams use the
/// node id, which never reaches this value.
pub const BOOTSTRAP_STREAM: u64 = u64::MAX;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed number `index` of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    stream(seed, index).next_u64()
}
