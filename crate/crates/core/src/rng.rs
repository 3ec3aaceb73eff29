//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha stream addressed by a
//! `(seed, label, index)` triple. Monte-Carlo trial `t` always sees the same
//! numbers no matter which worker runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of a named substream (`"design-init"`, `"fluctuation"`, ...).
pub fn substream(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the parent seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(seed ^ mix(h))
}

/// Derives the seed of the `index`-th child of `seed`.
pub fn child(seed: u64, index: u64) -> u64 {
    mix(seed.wrapping_add(mix(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// Generator for one seed.
pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Counter-based stream: stream `index` of the generator seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}
