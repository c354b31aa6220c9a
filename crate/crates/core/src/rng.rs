//! Reproducible random substreams.
//!
//! Every random task (a simulated trial, one imputation, one bootstrap
//! replicate, one oracle chunk) is identified by a path of integer
//! coordinates below a user seed. The path is hashed into a 256-bit ChaCha
//! key, so a task's draws depend only on its coordinates and never on the
//! order in which a thread pool happens to schedule it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags that keep sibling task families apart.
pub mod tag {
    pub const TRIAL: u64 = 0x7472_6961;
    pub const IMPUTATION: u64 = 0x696d_7075;
    pub const BOOTSTRAP: u64 = 0x626f_6f74;
    pub const RESAMPLE: u64 = 0x7265_7361;
    pub const ORACLE: u64 = 0x6f72_6163;
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes `seed` and a coordinate path into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut state = seed;
    let mut h = splitmix64(&mut state);
    for &coord in path {
        let mut c = coord ^ h.rotate_left(17);
        h = splitmix64(&mut c) ^ splitmix64(&mut state);
    }
    h
}

/// Opens the generator for the task at `path` below `seed`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
