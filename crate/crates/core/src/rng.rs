//! Seeded random streams.
//!
//! Every replica of an ensemble draws from its own ChaCha8 stream: the key is
//! derived from the master seed and the stream id is the replica index. A
//! replica's numbers therefore depend only on `(seed, index)`, never on how
//! replicas are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// The random stream for replica `index` under master seed `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A sub-stream for a second purpose within a replica (e.g. sampling the
/// initial condition versus driving the dynamics).
pub fn substream(seed: u64, index: u64, purpose: u32) -> SimRng {
    stream(seed ^ (u64::from(purpose).wrapping_mul(0x9e37_79b9_7f4a_7c15)), index)
}
