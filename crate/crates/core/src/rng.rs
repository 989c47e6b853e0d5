//! Counter-based noise streams.
//!
//! Every random draw in a simulation is addressed by a [`StreamKey`]. The key
//! is hashed into the seed of a fresh ChaCha8 generator, so the values a
//! client sees in a given round never depend on how many draws other clients
//! made or on which thread ran them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Which of the two coupled processes a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunId {
    /// Federation with fair clients only.
    Fair = 1,
    /// Federation including free-riders (also used by plain `run_training`).
    Attacked = 2,
}

/// What the draws are used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Standard normal perturbations (ζ, ε).
    Noise = 1,
    /// Minibatch index selection.
    Minibatch = 2,
    /// Random initial parameters.
    Init = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub run: RunId,
    pub round: u64,
    pub client: u64,
    pub purpose: Purpose,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a sequence of words.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |h, &w| splitmix(h ^ splitmix(w)))
}

/// Seed of replicate `index` of a Monte Carlo study.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    mix(&[seed, 0x5245_504C, index])
}

impl StreamKey {
    pub fn new(seed: u64, run: RunId, round: u64, client: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            run,
            round,
            client,
            purpose,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix(&[
            self.seed,
            self.run as u64,
            self.round,
            self.client,
            self.purpose as u64,
        ]))
    }

    /// `dim` independent standard normal draws, one per coordinate.
    pub fn normals(&self, dim: usize) -> Vec<f64> {
        standard_normals(&mut self.rng(), dim)
    }
}

pub fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}
