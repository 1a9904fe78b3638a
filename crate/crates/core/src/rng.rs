//! Named, indexed random streams derived from one user seed.
//!
//! Each stream is a ChaCha8 generator keyed by `(seed, purpose, index)`, so
//! replication `b` draws the same numbers no matter which thread runs it or
//! which other streams were consumed first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Simulated dataset for Monte Carlo iteration `index`.
    Dataset = 1,
    /// Bootstrap multipliers for replication `index` on the user's data.
    Bootstrap = 2,
    /// Bootstrap seeds for Monte Carlo iteration `index`.
    StudyBootstrap = 3,
    /// Synthetic example data.
    Synthetic = 4,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Derive a child seed, for handing a whole sub-study its own seed space.
pub fn child_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    use rand::Rng;
    stream(seed, purpose, index).random()
}
