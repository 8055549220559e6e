//! Counter-based random streams.
//!
//! Every random draw in training and sampling comes from a ChaCha8 stream
//! keyed by `(seed, step, item)` and selected by purpose, so adding or
//! skipping draws for one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 0,
    Batch = 1,
    Timestep = 2,
    ForwardNoise = 3,
    Selection = 4,
    Estimation = 5,
    AtomCount = 6,
    Sampling = 7,
    Corpus = 8,
}

pub fn stream(seed: u64, step: u64, item: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&item.to_le_bytes());
    key[24..].copy_from_slice(b"pktdiff0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(purpose as u64);
    rng
}
