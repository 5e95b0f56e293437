//! Seeded random streams.
//!
//! Every source of randomness is a ChaCha8 generator (`rand_chacha`, a
//! counter-based cipher stream whose output is specified bit-for-bit and
//! independent of platform). The 256-bit key is SHA-256 of a purpose tag
//! followed by the little-endian run seed, so streams for different purposes
//! never overlap. Within a purpose, independent substreams (one per synthetic
//! firm, for example) use ChaCha's 64-bit stream selector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng64 = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Synthetic,
    Init,
    Split,
    Batches,
    Baseline,
}

impl Purpose {
    fn tag(self) -> &'static [u8] {
        match self {
            Purpose::Synthetic => b"taxrisk/synthetic",
            Purpose::Init => b"taxrisk/init",
            Purpose::Split => b"taxrisk/split",
            Purpose::Batches => b"taxrisk/batches",
            Purpose::Baseline => b"taxrisk/baseline",
        }
    }
}

pub fn stream(seed: u64, purpose: Purpose, substream: u64) -> Rng64 {
    let mut hasher = Sha256::new();
    hasher.update(purpose.tag());
    hasher.update(seed.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(substream);
    rng
}
