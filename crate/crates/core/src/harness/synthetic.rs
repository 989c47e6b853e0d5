//! Synthetic logistic-regression datasets for SGD clients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::Sample;
use crate::rng::mix;

/// `samples` points with a bias feature and `features` Gaussian features
/// centred at `shift`; labels are Bernoulli draws from a fixed ground-truth
/// logistic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLogistic {
    pub samples: usize,
    pub features: usize,
    pub seed: u64,
    #[serde(default)]
    pub shift: f64,
}

impl SyntheticLogistic {
    /// Model dimension: the features plus the bias.
    pub fn dim(&self) -> usize {
        self.features + 1
    }

    /// Ground-truth weights `(0.5, 1.5, −1.5, 1.5, …)`.
    pub fn truth(&self) -> Vec<f64> {
        std::iter::once(0.5)
            .chain((0..self.features).map(|i| if i % 2 == 0 { 1.5 } else { -1.5 }))
            .collect()
    }

    /// Dataset of client `client`; distinct clients get independent draws.
    pub fn generate(&self, client: u64) -> Result<Vec<Sample>> {
        if self.samples == 0 {
            return Err(Error::domain("synthetic dataset needs at least one sample"));
        }
        if !self.shift.is_finite() {
            return Err(Error::domain("synthetic shift must be finite"));
        }
        let w = self.truth();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[self.seed, client, 0x5eed]));
        Ok((0..self.samples)
            .map(|_| {
                let x: Vec<f64> = std::iter::once(1.0)
                    .chain((0..self.features).map(|_| self.shift + rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let z: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                Sample { x, y }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_well_formed() {
        let s = SyntheticLogistic {
            samples: 50,
            features: 3,
            seed: 9,
            shift: 0.0,
        };
        let a = s.generate(0).unwrap();
        assert_eq!(a, s.generate(0).unwrap());
        assert_ne!(a, s.generate(1).unwrap());
        assert_eq!(a.len(), 50);
        assert!(a
            .iter()
            .all(|p| p.x.len() == 4 && p.x[0] == 1.0 && (p.y == 0.0 || p.y == 1.0)));
        assert!(a.iter().any(|p| p.y == 1.0) && a.iter().any(|p| p.y == 0.0));
    }
}
