//! Seeded random streams.
//!
//! Every consumer of randomness takes a [`StreamRng`]. Independent replicates
//! are given distinct ChaCha stream ids under one base seed, so a replicate's
//! draws depend only on `(seed, index)` and never on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream number `index` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed for `(seed, index)`, taken as the first word of that stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index).next_u64()
}

/// Draw an index from a probability vector. Falls back to the last index
/// with positive mass when rounding leaves `u` above the cumulative total.
pub(crate) fn pick_index<R: rand::Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
