//! Seeded, per-party random streams.
//!
//! Every party in a session draws from its own ChaCha20 stream keyed by the
//! session seed, with the party selecting the stream id. Trials derive their
//! session seed from the experiment seed with [`trial_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

/// Stream ids for the parties of one session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    /// Alice's trusted classical control: role permutation, settings, θ, r.
    Alice = 0,
    /// Alice's untrusted measuring device.
    AliceDevice = 1,
    /// Bob's device.
    Bob = 2,
    /// Born-rule sampling of the simulated physics.
    Nature = 3,
    /// Test and experiment scaffolding.
    Harness = 4,
}

pub fn party_stream(seed: u64, party: Party) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(party as u64);
    rng
}

/// SplitMix64 finalizer applied to `seed ⊕ trial`.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = (seed ^ trial).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
