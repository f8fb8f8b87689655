//! Keyed random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha stream whose seed is a
//! pure function of `(master seed, purpose, key...)`, so results never depend
//! on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for; keeps e.g. training and evaluation draws disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Train = 1,
    Eval = 2,
    Demo = 3,
    Verify = 4,
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, keys: &[u64]) -> StreamRng {
    let mut h = mix(seed ^ mix(purpose as u64));
    for &k in keys {
        h = mix(h ^ mix(k));
    }
    StreamRng::seed_from_u64(h)
}

/// Order-sensitive 64-bit fingerprint of a float sequence (FNV-1a over the bit patterns).
pub fn fingerprint<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
