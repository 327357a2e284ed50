//! Keyed random streams.
//!
//! A stream is identified by a master seed, a purpose tag and an index
//! (usually the replica number). ChaCha exposes a 64-bit stream id next to the
//! 256-bit key, so the tag is folded into the key and the index becomes the
//! stream id; two streams never overlap regardless of how many draws either
//! consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> SimRng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (n, chunk) in key.chunks_exact_mut(8).enumerate() {
        h = splitmix64(h ^ tag.rotate_left(17 * n as u32 + 1));
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Tag derived from a short label, so call sites can name their streams.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Exponential holding time with the given rate.
#[inline]
pub fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// Uniform draw in `[0, scale)`.
#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    rng.random::<f64>() * scale
}
