//! Seeded, splittable randomness.
//!
//! Every stream is identified by `(seed, stream_id)`. The generator behind a
//! stream is ChaCha8 keyed with `mix(seed, stream_id)`, where `mix` is built
//! from the SplitMix64 finalizer:
//!
//! ```text
//! mix(seed, stream) = splitmix64(seed ^ splitmix64(stream))
//! ```
//!
//! Sub-streams are derived by hashing path components into the stream id, so
//! the sequence a client sees never depends on the order in which other
//! streams were consumed.

pub use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, stream_id: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream_id))
}

/// Folds a path of components (purpose, round, client, ...) into one stream id.
pub fn stream_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6D65_7461_666C_0001, |acc, &p| mix(acc, p))
}

/// Stream purposes used by the simulator.
pub mod purpose {
    pub const DATA: u64 = 1;
    pub const EVAL_SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const LABEL_FLIP: u64 = 4;
    pub const LOCAL_TRAIN: u64 = 5;
    pub const POISON: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            seed,
            stream_id,
            inner: ChaCha8Rng::seed_from_u64(mix(seed, stream_id)),
        }
    }

    /// Stream for a path of components under the same master seed.
    pub fn for_path(seed: u64, parts: &[u64]) -> Self {
        Self::new(seed, stream_key(parts))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh independent stream keyed by this stream's id and `sub`.
    pub fn derive(&self, sub: u64) -> Rng {
        Rng::new(self.seed, mix(self.stream_id, sub))
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
