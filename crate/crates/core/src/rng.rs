//! Seeded, splittable random streams.
//!
//! Every random decision in the pipeline draws from a [`Stream`] derived from
//! the global seed plus a purpose tag and a list of indices (image index,
//! epoch, ...). Streams never depend on execution order, so work can be
//! distributed across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Stream = ChaCha8Rng;

/// Purpose tags separating otherwise identical index tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Augment = 3,
    Shuffle = 4,
    Scene = 5,
    Jitter = 6,
    Holdout = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream for `(seed, purpose, indices)`.
pub fn substream(seed: u64, purpose: Purpose, indices: &[u64]) -> Stream {
    let mut state = seed;
    let mut acc = splitmix64(&mut state) ^ purpose as u64;
    for &ix in indices {
        let mut s = acc ^ ix.wrapping_mul(0xd6e8_feb8_6659_fd93);
        acc = splitmix64(&mut s);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
