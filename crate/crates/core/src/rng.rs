//! Seed derivation. Every random stage owns an explicit RNG; parallel work
//! derives one per item so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids keep the draws of different pipeline steps independent even
/// when they share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Synthesis = 1,
    Corruption = 2,
    Sampling = 3,
    Capture = 4,
    Fitting = 5,
}

/// RNG for item `frame_id` of a run seeded with `seed` (`seed ⊕ frame_id`).
pub fn frame_rng(seed: u64, frame_id: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ frame_id);
    rng.set_stream(stream as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
