//! Seeded random streams.
//!
//! Every run derives all of its randomness from a single seed. Each consumer
//! draws from its own named ChaCha stream, so enabling or disabling one
//! component never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic graph generation.
    Data = 1,
    /// Train/val/test partition and demographic masking.
    Split = 2,
    /// Parameter initialization of the demographic identifier.
    IdentifierInit = 3,
    /// Parameter initialization of the fair encoder, masks and head.
    FairInit = 4,
    /// Edge and non-edge sampling for the reconstruction loss.
    Sampling = 5,
    /// Anything test or diagnostic code needs.
    Aux = 6,
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
