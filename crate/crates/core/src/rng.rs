//! Deterministic random substreams.
//!
//! Every independent unit of work (a group in stage 1, a group's block update
//! in the full sampler or in stage 2, a group in the simulator) draws from its
//! own ChaCha8 generator whose seed is a fixed function of the master seed and
//! the unit's identity. Results therefore never depend on worker count or on
//! the order in which units are scheduled.
//!
//! The mixing function is the SplitMix64 finalizer (Stafford's "Mix13"):
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! and a substream seed is `mix(mix(master ^ domain) + GOLDEN * (id + 1))`
//! with `GOLDEN = 0x9E3779B97F4A7C15`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags keep the streams of different samplers disjoint even when they
/// are given the same master seed.
pub mod domain {
    pub const STAGE1: u64 = 0;
    pub const FULL_GLOBAL: u64 = 0x46_554c_4c47; // "FULLG"
    pub const FULL_GROUP: u64 = 0x46_554c_4c49; // "FULLI"
    pub const STAGE2_GLOBAL: u64 = 0x53_5432_4700; // "ST2G"
    pub const STAGE2_GROUP: u64 = 0x53_5432_4900; // "ST2I"
    pub const SIMULATE: u64 = 0x53_494d_0000; // "SIM"
}

/// SplitMix64 finalizer: a bijective avalanche mix of 64 bits.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for unit `id` under `master` within `domain`.
pub fn derive_seed(master: u64, domain: u64, id: u64) -> u64 {
    let base = mix64(master ^ domain);
    mix64(base.wrapping_add(GOLDEN_GAMMA.wrapping_mul(id.wrapping_add(1))))
}

/// Per-group stage-1 seed, a function of `(master_seed, group_id)` only.
pub fn stage1_seed(master: u64, group_id: u64) -> u64 {
    derive_seed(master, domain::STAGE1, group_id)
}

pub fn stream(master: u64, domain: u64, id: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, domain, id))
}
