//! Named random streams derived from one root seed.
//!
//! Every stochastic component draws from its own stream (`synth`, `init`,
//! `shuffle`, `augment`, ...), so changing how much randomness one component
//! consumes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed of the named sub-stream of `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(name)))
}

/// Seed keyed by a stream name and a sequence of counters, e.g. `(epoch, sample)`.
pub fn keyed(root: u64, name: &str, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(substream(root, name), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Counter-based generator for `(root, name, keys...)`.
pub fn stream_rng(root: u64, name: &str, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(keyed(root, name, keys))
}
