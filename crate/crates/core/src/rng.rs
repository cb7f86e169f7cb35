//! Deterministic random substreams.
//!
//! Every block of a Gibbs phase draws from its own ChaCha stream keyed by
//! `(seed, sweep, phase)` with the block id as the stream number, so serial
//! and parallel execution consume identical random numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SamplerRng = ChaCha8Rng;

/// Stream domains. Values are part of the reproducibility contract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Init = 1,
    GroupBias = 2,
    UserGroups = 3,
    Niw = 4,
    Intrinsic = 5,
    Latent = 6,
    Cutpoints = 7,
    Predict = 8,
    Simulate = 9,
    Folds = 10,
    Diagnostics = 11,
    AncillaryGroups = 12,
    AncillaryBias = 13,
    AncillaryIntrinsic = 14,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stream for one block of one phase of one sweep.
pub fn substream(seed: u64, sweep: u64, phase: Phase, block: u64) -> SamplerRng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ sweep) ^ phase as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(block);
    rng
}

/// Plain seeded generator for one-off uses (tests, simulation drivers).
pub fn seeded(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Index drawn from a probability vector by inversion.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (g, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return g;
        }
    }
    probs.len() - 1
}
