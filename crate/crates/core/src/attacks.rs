//! Free-rider update strategies.
//!
//! A plain free-rider echoes the broadcast model. A disguised free-rider adds
//! zero-mean Gaussian noise scaled by a schedule `φ(t)`. The schedule can be
//! fixed, a power decay `σ·t^(−γ)`, the constant that mimics an SGD client, or
//! a power decay whose `σ` is fitted to the first observed global increment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::sgd_noise_std;
use crate::types::ParameterVector;

/// Perturbation level `φ(t)` of a disguised free-rider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSchedule {
    Fixed {
        phi: f64,
    },
    PowerDecay {
        sigma: f64,
        gamma: f64,
    },
    /// `φ² = (λ/S)·σ_k²·(1/(2r_k))·(1 − e^{−2λ r_k E M_k/S})`.
    SgdMimic {
        lr: f64,
        batch: u64,
        sigma: f64,
        curvature: f64,
        epochs: u32,
        samples: u64,
    },
    /// Power decay whose `σ` is the RMS of `θ̃¹ − θ̃⁰`, times `multiplier`.
    /// Until that increment has been observed the rider uploads plainly.
    Calibrated {
        gamma: f64,
        #[serde(default = "one")]
        multiplier: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::domain(format!("noise schedule: {what}")));
        match *self {
            NoiseSchedule::Fixed { phi } if !(phi.is_finite() && phi >= 0.0) => bad("phi must be >= 0"),
            NoiseSchedule::PowerDecay { sigma, gamma } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    bad("sigma must be >= 0")
                } else if !(gamma.is_finite() && gamma > 0.0) {
                    bad("gamma must be > 0")
                } else {
                    Ok(())
                }
            }
            NoiseSchedule::SgdMimic {
                lr,
                batch,
                sigma,
                curvature,
                epochs,
                samples,
            } => sgd_noise_std(lr, batch, sigma, curvature, epochs, samples).map(|_| ()),
            NoiseSchedule::Calibrated { gamma, multiplier } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    bad("gamma must be > 0")
                } else if !(multiplier.is_finite() && multiplier >= 0.0) {
                    bad("multiplier must be >= 0")
                } else {
                    Ok(())
                }
            }
            NoiseSchedule::Fixed { .. } => Ok(()),
        }
    }

    /// Replaces a pending calibration by the power decay it resolves to.
    pub fn calibrate(self, fitted_sigma: f64) -> Self {
        match self {
            NoiseSchedule::Calibrated { gamma, multiplier } => NoiseSchedule::PowerDecay {
                sigma: multiplier * fitted_sigma,
                gamma,
            },
            other => other,
        }
    }

    pub fn needs_calibration(&self) -> bool {
        matches!(self, NoiseSchedule::Calibrated { .. })
    }

    /// `lim φ(t)` as t → ∞.
    pub fn limit(&self) -> Result<f64> {
        match *self {
            NoiseSchedule::Fixed { phi } => Ok(phi),
            NoiseSchedule::PowerDecay { .. } | NoiseSchedule::Calibrated { .. } => Ok(0.0),
            NoiseSchedule::SgdMimic { .. } => phi_at(self, 1),
        }
    }
}

/// How a free-rider builds its upload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Plain,
    Disguised { schedule: NoiseSchedule },
}

/// A free-rider and the sample count `M_k` it declares to the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeRiderSpec {
    pub samples: u64,
    pub strategy: Strategy,
}

impl FreeRiderSpec {
    pub fn plain(samples: u64) -> Self {
        Self {
            samples,
            strategy: Strategy::Plain,
        }
    }

    pub fn disguised(samples: u64, schedule: NoiseSchedule) -> Self {
        Self {
            samples,
            strategy: Strategy::Disguised { schedule },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::domain("free-rider must declare at least one sample"));
        }
        if let Strategy::Disguised { schedule } = &self.strategy {
            schedule.validate()?;
        }
        Ok(())
    }
}

/// Plain free-riding: the upload is the broadcast model, bit for bit.
pub fn plain_update(theta_global: &ParameterVector) -> ParameterVector {
    theta_global.clone()
}

/// `φ(t)` for round index `t ≥ 1`.
pub fn phi_at(schedule: &NoiseSchedule, t: u64) -> Result<f64> {
    match *schedule {
        NoiseSchedule::Fixed { phi } => Ok(phi),
        NoiseSchedule::PowerDecay { sigma, gamma } => {
            if t == 0 {
                return Err(Error::domain("power-decay schedule is singular at t = 0"));
            }
            Ok(sigma * (t as f64).powf(-gamma))
        }
        NoiseSchedule::SgdMimic {
            lr,
            batch,
            sigma,
            curvature,
            epochs,
            samples,
        } => sgd_noise_std(lr, batch, sigma, curvature, epochs, samples),
        NoiseSchedule::Calibrated { .. } => {
            Err(Error::domain("calibrated schedule has no value before sigma is fitted"))
        }
    }
}

/// Disguised free-riding: `θ^t + φ(t)·ε` with the caller's standard normal
/// draws `noise`.
pub fn disguised_update(
    theta_global: &ParameterVector,
    schedule: &NoiseSchedule,
    t: u64,
    noise: &[f64],
) -> Result<ParameterVector> {
    let phi = phi_at(schedule, t)?;
    perturb(theta_global, phi, noise)
}

pub(crate) fn perturb(theta_global: &ParameterVector, phi: f64, noise: &[f64]) -> Result<ParameterVector> {
    if noise.len() != theta_global.dim() {
        return Err(Error::structural(format!(
            "{} noise draws for a {}-dimensional model",
            noise.len(),
            theta_global.dim()
        )));
    }
    ParameterVector::new(theta_global.iter().zip(noise).map(|(&g, &e)| g + phi * e).collect())
}

/// Zero-mean Gaussian MLE of the standard deviation of an increment:
/// `sqrt(mean(Δ²))`.
pub fn estimate_sigma(increment: &ParameterVector) -> f64 {
    let n = increment.dim() as f64;
    (increment.iter().map(|d| d * d).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normals, Purpose, RunId, StreamKey};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn plain_is_identity() {
        let theta = pv(&[1.5, -2.0]);
        assert_eq!(plain_update(&theta), theta);
        let z = pv(&[0.0, 0.0]);
        assert_eq!(plain_update(&z), z);
        assert_eq!(plain_update(&theta).max_abs_diff(&theta).unwrap(), 0.0);
    }

    #[test]
    fn phi_values() {
        let pd = NoiseSchedule::PowerDecay { sigma: 1.0, gamma: 1.0 };
        assert_eq!(phi_at(&pd, 1).unwrap(), 1.0);
        assert_eq!(phi_at(&pd, 2).unwrap(), 0.5);
        assert!(phi_at(&pd, 0).is_err());
        assert_eq!(phi_at(&NoiseSchedule::Fixed { phi: 0.2 }, 0).unwrap(), 0.2);
        assert_eq!(phi_at(&NoiseSchedule::Fixed { phi: 0.2 }, 99).unwrap(), 0.2);
        let mimic = NoiseSchedule::SgdMimic {
            lr: 0.1,
            batch: 10,
            sigma: 1.0,
            curvature: 1.0,
            epochs: 1,
            samples: 100,
        };
        assert_relative_eq!(phi_at(&mimic, 5).unwrap(), 0.065752, epsilon = 1e-6);
        assert!(phi_at(
            &NoiseSchedule::Calibrated {
                gamma: 1.0,
                multiplier: 1.0
            },
            1
        )
        .is_err());
    }

    #[test]
    fn calibration_resolves_to_power_decay() {
        let c = NoiseSchedule::Calibrated {
            gamma: 2.0,
            multiplier: 3.0,
        };
        assert!(c.needs_calibration());
        assert_eq!(c.calibrate(0.5), NoiseSchedule::PowerDecay { sigma: 1.5, gamma: 2.0 });
        let f = NoiseSchedule::Fixed { phi: 0.1 };
        assert_eq!(f.calibrate(9.0), f);
    }

    #[test]
    fn schedule_validation() {
        assert!(NoiseSchedule::Fixed { phi: -0.1 }.validate().is_err());
        assert!(NoiseSchedule::PowerDecay { sigma: 1.0, gamma: 0.0 }.validate().is_err());
        assert!(NoiseSchedule::Calibrated {
            gamma: -1.0,
            multiplier: 1.0
        }
        .validate()
        .is_err());
        assert!(FreeRiderSpec::plain(0).validate().is_err());
        assert!(FreeRiderSpec::plain(3).validate().is_ok());
    }

    #[test]
    fn zero_phi_equals_plain() {
        let theta = pv(&[0.25, -4.0, 9.0]);
        let out = disguised_update(&theta, &NoiseSchedule::Fixed { phi: 0.0 }, 3, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, plain_update(&theta));
    }

    fn increment_moments(schedule: NoiseSchedule, t: u64, n: usize) -> (f64, f64) {
        let theta = pv(&[3.0]);
        let mut rng = StreamKey::new(17, RunId::Attacked, t, 0, Purpose::Noise).rng();
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let e = standard_normals(&mut rng, 1);
                disguised_update(&theta, &schedule, t, &e).unwrap()[0] - 3.0
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (mean, var)
    }

    #[test]
    fn fixed_noise_variance() {
        let n = 100_000;
        let (mean, var) = increment_moments(NoiseSchedule::Fixed { phi: 0.2 }, 1, n);
        assert!(mean.abs() < 3.0 * 0.2 / (n as f64).sqrt());
        assert!((var - 0.04).abs() < 3.0 * 0.04 * (2.0 / (n as f64 - 1.0)).sqrt());
    }

    #[test]
    fn power_decay_variance_at_t10() {
        let n = 100_000;
        let sigma: f64 = 0.7;
        let (_, var) = increment_moments(NoiseSchedule::PowerDecay { sigma, gamma: 2.0 }, 10, n);
        let expected = 1e-4 * sigma * sigma;
        assert!((var - expected).abs() < 3.0 * expected * (2.0 / (n as f64 - 1.0)).sqrt());
    }

    #[test]
    fn power_decay_bounded_and_vanishing() {
        let (sigma, gamma) = (0.3, 0.5);
        let s = NoiseSchedule::PowerDecay { sigma, gamma };
        let mut prev = f64::INFINITY;
        for t in (1..=1_000_000u64).step_by(997) {
            let phi = phi_at(&s, t).unwrap();
            assert!(phi <= sigma * (t as f64).powf(-gamma));
            assert!(phi < prev);
            prev = phi;
        }
        assert!(phi_at(&s, 1_000_000).unwrap() <= sigma * 1e-3 + 1e-18);
        assert_eq!(s.limit().unwrap(), 0.0);
    }

    #[test]
    fn sigma_estimates() {
        assert_eq!(estimate_sigma(&pv(&[1.0, -1.0, 1.0, -1.0])), 1.0);
        assert_eq!(estimate_sigma(&pv(&[0.0, 0.0])), 0.0);
        assert_relative_eq!(estimate_sigma(&pv(&[3.0, 4.0])), 12.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(estimate_sigma(&pv(&[3.0, 4.0])), 3.535534, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn sigma_invariant_under_permutation_and_sign(
            v in prop::collection::vec(-100.0f64..100.0, 1..12),
            rot in 0usize..12,
            flips in prop::collection::vec(any::<bool>(), 12),
        ) {
            let base = estimate_sigma(&pv(&v));
            let mut w = v.clone();
            w.rotate_left(rot % v.len());
            for (x, f) in w.iter_mut().zip(&flips) {
                if *f { *x = -*x; }
            }
            let other = estimate_sigma(&pv(&w));
            prop_assert!((base - other).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn zero_phi_is_plain_for_all_inputs(v in prop::collection::vec(-1e6f64..1e6, 1..6), t in 1u64..1000) {
            let theta = pv(&v);
            let noise: Vec<f64> = (0..v.len()).map(|i| i as f64 - 2.5).collect();
            let out = disguised_update(&theta, &NoiseSchedule::Fixed { phi: 0.0 }, t, &noise).unwrap();
            prop_assert_eq!(out, plain_update(&theta));
        }
    }
}
