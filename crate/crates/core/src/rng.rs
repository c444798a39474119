//! Named random sub-streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

/// Seed of the sub-stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn stream(root: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(root, name))
}

/// Sub-stream indexed by an integer, e.g. the shuffle of epoch `i`.
pub fn indexed_stream(root: u64, name: &str, index: u64) -> StreamRng {
    stream(root, &format!("{name}/{index}"))
}
