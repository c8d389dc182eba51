//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a hash of `(seed, stream tag, indices...)`, so results do not
//! depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(parts: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Stream tags; distinct constants keep streams independent.
pub mod tag {
    pub const IDENTITY: u64 = 1;
    pub const POSE: u64 = 2;
    pub const CAMERA: u64 = 3;
    pub const PROTOCOL: u64 = 4;
    pub const GAN_INIT: u64 = 5;
    pub const GAN_TRAIN: u64 = 6;
    pub const REID_INIT: u64 = 7;
    pub const REID_TRAIN: u64 = 8;
    pub const TRIAL: u64 = 9;
}
