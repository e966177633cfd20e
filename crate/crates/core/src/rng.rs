//! Reproducible stream splitting.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! master seed and a short path of integers (purpose tag, replicate,
//! observation index, particle index, ...). The key is derived by feeding the
//! path through SplitMix64, so a given path always yields the same stream no
//! matter which thread evaluates it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Purpose tags keep unrelated consumers of one master seed apart.
pub mod tag {
    pub const SIMULATE: u64 = 1;
    pub const DIAGNOSE: u64 = 2;
    pub const PROCESS: u64 = 3;
    pub const RESAMPLE: u64 = 4;
    pub const PERTURB: u64 = 5;
    pub const ITERATION: u64 = 6;
    pub const REPLICATE: u64 = 7;
    pub const PROFILE: u64 = 8;
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit digest of a seed path; also used to derive child master seeds.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut s = master;
    let mut h = splitmix64(&mut s);
    for &p in path {
        s = h ^ p.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        h = splitmix64(&mut s);
    }
    h
}

pub fn stream(master: u64, path: &[u64]) -> Stream {
    let mut s = derive_seed(master, path);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
