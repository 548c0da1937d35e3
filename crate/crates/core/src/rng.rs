//! Named child RNG streams derived from one root seed.
//!
//! Every consumer of randomness asks for its own stream by name, so adding a
//! new stream never shifts the values drawn by an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed of the child stream `name` under `root`.
pub fn child_seed(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(name.as_bytes())))
}

/// Deterministic stream for `name` under `root`.
pub fn stream(root: u64, name: &str) -> Stream {
    ChaCha8Rng::seed_from_u64(child_seed(root, name))
}

/// Stream keyed by a name plus an integer index (per-layer, per-sample, ...).
pub fn indexed_stream(root: u64, name: &str, index: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(splitmix64(child_seed(root, name) ^ splitmix64(index)))
}
