//! Seed derivation for reproducible parallel streams.
//!
//! Every stochastic component draws from a ChaCha8 generator whose 256-bit key
//! is expanded from `(master seed, domain tag)` with SplitMix64 and whose
//! 64-bit stream id is the item index. Items can therefore be generated in
//! any order or on any number of threads and still produce the same values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags keep the streams of different pipeline stages disjoint.
pub mod domain {
    pub const SYNTH: u64 = 0x5359_4e54_4845_5349;
    pub const INIT: u64 = 0x494e_4954_5745_4947;
    pub const MC_FIT: u64 = 0x4d43_5f46_4954_5453;
    pub const BENCH: u64 = 0x4245_4e43_485f_4249;
    pub const VALIDATION: u64 = 0x5641_4c49_4441_5445;
    pub const PIXEL: u64 = 0x5049_5845_4c5f_4d43;
}

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for item `index` of the stream `(master, domain)`.
pub fn stream(master: u64, domain: u64, index: u64) -> StreamRng {
    let mut state = master ^ domain.rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a child master seed, e.g. one per evaluation bin.
pub fn child_seed(master: u64, tag: u64) -> u64 {
    let mut state = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, domain::SYNTH, 3).random();
        let b: u64 = stream(7, domain::SYNTH, 3).random();
        let c: u64 = stream(7, domain::SYNTH, 4).random();
        let d: u64 = stream(7, domain::MC_FIT, 3).random();
        let e: u64 = stream(8, domain::SYNTH, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(a, e);
    }

    #[test]
    fn splitmix_reference() {
        // first outputs for seed 0, from the reference implementation
        let mut s = 0u64;
        assert_eq!(splitmix64(&mut s), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(&mut s), 0x6e78_9e6a_a1b9_65f4);
    }
}
