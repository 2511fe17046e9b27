//! Seed derivation for deterministic, parallel-safe randomness.
//!
//! Every command feeds a single master seed. Independent random streams
//! (matrices, per-example draws, batch shuffles, ...) are derived from it
//! with the splitmix64 finalizer applied twice over `(master ^ domain,
//! index)`, so streams never alias across domains or indices and the bytes
//! produced do not depend on thread count or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags for derived streams. Values are arbitrary but fixed forever;
/// changing one changes every artifact downstream of it.
pub mod domain {
    pub const PREVALENCES: u64 = 0x01;
    pub const LABEL_EMBED: u64 = 0x02;
    pub const VISION_MAP: u64 = 0x03;
    pub const TEXT_MAP: u64 = 0x04;
    pub const AUDIO_MAP: u64 = 0x05;
    pub const SPEAKER_OFFSETS: u64 = 0x06;
    pub const EXAMPLE: u64 = 0x07;
    pub const SPLIT: u64 = 0x08;
    pub const VISION_PROJECTOR: u64 = 0x09;
    pub const STUDENT_INIT: u64 = 0x0a;
    pub const BATCH_SHUFFLE: u64 = 0x0b;
    pub const GRADCHECK: u64 = 0x0c;
}

/// splitmix64 finalizer (Steele, Lea, Flood 2014). Full 64-bit avalanche.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive the seed for stream `(domain, index)` under `master`.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ domain) ^ index)
}

/// Deterministic RNG for stream `(domain, index)` under `master`.
pub fn stream_rng(master: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, index))
}
