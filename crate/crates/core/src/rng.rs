//! Deterministic random-stream derivation.
//!
//! Every stochastic component draws from its own stream, keyed on
//! `(seed, round, device, purpose)`. The key is hashed with SHA-256 into a
//! ChaCha seed, so distinct keys give statistically independent streams and
//! identical keys reproduce the same stream across runs, call orders, and
//! thread counts. The `device` component doubles as a generic discriminator
//! (participation slot, block index) where no single device is involved; the
//! `purpose` label keeps such uses from colliding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives the pseudorandom stream for one `(seed, round, device, purpose)` key.
pub fn stream(seed: u64, round: u64, device: u64, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(round.to_le_bytes());
    hasher.update(device.to_le_bytes());
    hasher.update(purpose.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}
