//! Keyed random streams.
//!
//! Every random draw in the crate comes from a generator seeded by hashing a
//! key path `(master, cell, ..., t, i)`. Two streams with different keys are
//! independent for practical purposes, and a stream never depends on how many
//! draws another stream made, so results do not change with worker count or
//! evaluation order.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Domain tags that separate the top-level uses of one cell key.
pub mod domain {
    pub const DATA: u64 = 0xD47A;
    pub const CD: u64 = 0xC0DE;
    pub const PROBE: u64 = 0x9808E;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master: u64) -> Self {
        Self(splitmix64(master ^ 0x005E_ED0F_C0A7_5EED))
    }

    /// Derives a child key; `key.child(a).child(b)` differs from
    /// `key.child(b).child(a)`.
    pub fn child(self, label: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x9E37_79B9_7F4A_7C15))))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Generator for draw site `(t, i)` under this key.
    pub fn rng(self, t: u64, i: u64) -> StreamRng {
        self.child(t).rng_at(i)
    }

    /// Generator for draw site `i` directly under this key.
    pub fn rng_at(self, i: u64) -> StreamRng {
        StreamRng::seed_from_u64(self.child(i).0)
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
