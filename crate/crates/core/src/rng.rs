//! Deterministic seed derivation.
//!
//! Every random draw in the simulator comes from a ChaCha stream whose seed
//! is derived from the scenario seed plus a path of integers and a stream
//! name, so independent consumers never share a stream and a run is fully
//! reproducible from `(scenario, policy, seed)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base`, each component of `path`, and the bytes of `stream`.
pub fn derive_seed(base: u64, path: &[u64], stream: &str) -> u64 {
    let mut h = splitmix64(base);
    for &p in path {
        h = splitmix64(h ^ p);
    }
    for b in stream.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

pub fn stream(base: u64, path: &[u64], name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path, name))
}

/// Per-frame sensor substream: `(seed, episode, step, attempt, sensor)`.
pub fn frame_seed(seed: u64, episode: u64, step: u64, attempt: u64, sensor: &str) -> u64 {
    derive_seed(seed, &[episode, step, attempt], sensor)
}
