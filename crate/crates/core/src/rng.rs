//! Named random substreams derived from a single scenario seed.
//!
//! Every consumer of randomness asks for its own stream by name (and, where
//! relevant, an index such as the iteration number), so changing how many
//! draws one consumer makes never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PLACEMENT: &str = "placement";
pub const POPULATION: &str = "population";
pub const PERMUTATION: &str = "permutation";
pub const SAMPLING: &str = "sampling";
pub const CALIBRATION_START: &str = "calibration-start";

fn fnv1a(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, name, index)`.
pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(fnv1a(name) ^ splitmix64(index)));
    let mut rng = ChaCha8Rng::seed_from_u64(mixed);
    rng.set_stream(fnv1a(name));
    rng
}
