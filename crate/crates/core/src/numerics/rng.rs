//! Seed derivation. Every random stream in a run is keyed by a parent seed
//! and a purpose label, so streams never share state and adding a consumer
//! does not perturb the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// What a derived random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Shuffle,
    Dropout,
    Canary,
    Attack,
    Corpus,
}

impl Purpose {
    fn label(self) -> &'static str {
        match self {
            Purpose::Init => "init",
            Purpose::Shuffle => "shuffle",
            Purpose::Dropout => "dropout",
            Purpose::Canary => "canary",
            Purpose::Attack => "attack",
            Purpose::Corpus => "corpus",
        }
    }
}

/// First eight bytes (little-endian) of SHA-256 over the given parts.
pub fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn derive_seed(parent: u64, purpose: Purpose) -> u64 {
    hash_seed(&[&parent.to_le_bytes(), purpose.label().as_bytes()])
}

pub fn rng_for(parent: u64, purpose: Purpose) -> Rng {
    Rng::seed_from_u64(derive_seed(parent, purpose))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
