//! Seeded random streams.
//!
//! Every source of randomness in a run is a ChaCha8 generator seeded from the
//! run seed via `seed_from_u64` and placed on a dedicated stream, so draws for
//! one purpose (say, class-level contrast sampling) never shift the draws of
//! another (say, mini-batch order). Results replicate across machines because
//! ChaCha8 output is fully specified.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Named streams drawn from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    ClassPermutation = 1,
    ModelInit = 2,
    BatchOrder = 3,
    Buffer = 4,
    Replay = 5,
    ClassContrast = 6,
    HeadExpansion = 7,
    Dataset = 8,
    Transform = 9,
    PromptPool = 10,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// Generator keyed by a seed and an arbitrary label, used where the label set
/// is open-ended (transform ids, text prompts).
pub fn keyed(seed: u64, key: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Hex SHA-256 digest of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a float slice by exact bit pattern.
pub fn hash_f64s(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
