//! Seeded random streams.
//!
//! Every parallel unit of work (trial, observation, pair) owns an
//! independent ChaCha stream derived from `(master_seed, stream_index)`, so
//! results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// RNG for a given master seed and stream index.
pub fn stream_rng(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Packs a two-level index (e.g. sweep point, trial) into one stream id.
pub fn stream_id(outer: u64, inner: u64) -> u64 {
    (outer << 32) ^ (inner & 0xffff_ffff)
}
