//! Counter-derived random streams.
//!
//! Every independent unit of work (an importance sample, a calibration pilot,
//! a sweep entry) gets its own ChaCha stream keyed by the master seed, a
//! purpose tag and an index. Results therefore do not depend on how the work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a byte string. Stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from `(master, tag, index)`.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut state = master ^ fnv1a(tag.as_bytes()).rotate_left(17);
    splitmix64(&mut state);
    state ^= index.wrapping_mul(0xd605_bbb5_8c8a_bbdd);
    splitmix64(&mut state)
}

/// Independent stream for `(master, tag, index)`.
pub fn stream(master: u64, tag: &str, index: u64) -> StreamRng {
    let mut state = derive_seed(master, tag, index);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
