//! Deterministic random streams keyed by run seed and purpose.
//!
//! Every stochastic decision draws from a stream that depends only on the
//! run seed and the entity it concerns, never on how entities are spread
//! over logical processes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    MobilityAssignment = 2,
    Mobility = 3,
    Protocol = 4,
    Repetition = 5,
    Level1 = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, key: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream as u64)) ^ key)
}

pub fn stream(seed: u64, stream: Stream, key: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, key))
}
