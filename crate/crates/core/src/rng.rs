//! Deterministic seed derivation.
//!
//! Every random stream is keyed by the run seed plus a stream label and up
//! to two integers (device, round, epoch, ...), so results do not depend on
//! the order in which independent units are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: &str, a: u64, b: u64) -> u64 {
    let mut h = mix(seed);
    for byte in stream.bytes() {
        h = mix(h ^ u64::from(byte));
    }
    h = mix(h ^ a);
    mix(h ^ b.rotate_left(17))
}

pub fn stream_rng(seed: u64, stream: &str, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, a, b))
}
