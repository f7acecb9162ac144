//! Seed derivation.
//!
//! Every random quantity in the crate is drawn from a `ChaCha8Rng` seeded
//! by a 64-bit value. Per-purpose seeds are derived from a master seed with
//! a counter scheme:
//!
//! ```text
//! derive_seed(master, stream, index) =
//!     splitmix64(splitmix64(master ^ splitmix64(stream)) ^ splitmix64(index + 1))
//! ```
//!
//! `stream` names the purpose (see the `STREAM_*` constants) and `index`
//! is the replicate / draw counter. Seeds therefore depend only on
//! `(master, stream, index)`, so parallel loops are reproducible and
//! changing one index never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_REPLICATE: u64 = 0x5245_504c; // "REPL"
pub const STREAM_LAW_DRAW: u64 = 0x4c41_5744; // "LAWD"
pub const STREAM_INTEGRATION: u64 = 0x494e_5447; // "INTG"

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let base = splitmix64(master ^ splitmix64(stream));
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
