//! Closed-form asymptotics of `θ̃^t − θ^t`, the gap between the attacked
//! federation and the fair-only one.
//!
//! The `*_asymptotic_variance` functions evaluate the published limits. Two
//! additional evaluators compute the exact variance of the difference of two
//! independent linear Gaussian recursions: [`stationary_variance`] (t → ∞) and
//! [`finite_horizon_variance`] (any t). They differ from the published limits
//! whenever `M_K > 0` and are what Monte Carlo estimates converge to.

use serde::{Deserialize, Serialize};

use crate::attacks::{phi_at, NoiseSchedule, Strategy};
use crate::error::{Error, Result};
use crate::federation::{FairClient, Scenario};
use crate::local::{fedprox_coefficients, Decay, OuPhysics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairTerm {
    pub samples: u64,
    pub eta: f64,
    /// `ρ_j`, or its limit when `rho_decay` is set.
    pub rho: f64,
    pub rho_decay: Option<Decay>,
    /// Physical constants; required for FedProx evaluation.
    pub physics: Option<OuPhysics>,
}

impl FairTerm {
    pub fn new(samples: u64, eta: f64, rho: f64) -> Self {
        Self {
            samples,
            eta,
            rho,
            rho_decay: None,
            physics: None,
        }
    }

    fn rho_at(&self, t: u64) -> f64 {
        self.rho + self.rho_decay.map_or(0.0, |d| d.at(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiderTerm {
    pub samples: u64,
    /// `φ_k`, or its limit when `phi_decay` is set; 0 for plain riders.
    pub phi: f64,
    pub phi_decay: Option<Decay>,
    /// `σ` is fitted during the run, so transients are unknown in advance.
    pub calibrated: bool,
}

impl RiderTerm {
    pub fn plain(samples: u64) -> Self {
        Self::fixed(samples, 0.0)
    }

    pub fn fixed(samples: u64, phi: f64) -> Self {
        Self {
            samples,
            phi,
            phi_decay: None,
            calibrated: false,
        }
    }

    fn phi_at(&self, t: u64) -> f64 {
        self.phi + self.phi_decay.map_or(0.0, |d| d.at(t))
    }
}

/// Symbols entering every closed-form variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub fair: Vec<FairTerm>,
    pub riders: Vec<RiderTerm>,
}

impl TheoryInputs {
    pub fn new(fair: Vec<FairTerm>, riders: Vec<RiderTerm>) -> Result<Self> {
        let inputs = Self { fair, riders };
        inputs.validate()?;
        Ok(inputs)
    }

    /// Theory symbols of an OU scenario. For FedProx scenarios the OU clients
    /// already carry the primed coefficients.
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let fair = scenario
            .fair
            .iter()
            .map(|c| match c {
                FairClient::Ou(s) => Ok(FairTerm {
                    samples: s.samples,
                    eta: s.eta,
                    rho: s.rho,
                    rho_decay: s.rho_decay,
                    physics: None,
                }),
                FairClient::Sgd(_) => Err(Error::Unsupported(
                    "closed-form theory needs OU fair clients, not SGD clients".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        let riders = scenario
            .riders
            .iter()
            .map(|r| {
                Ok(match r.strategy {
                    Strategy::Plain => RiderTerm::plain(r.samples),
                    Strategy::Disguised { schedule } => match schedule {
                        NoiseSchedule::Fixed { phi } => RiderTerm::fixed(r.samples, phi),
                        NoiseSchedule::SgdMimic { .. } => RiderTerm::fixed(r.samples, phi_at(&schedule, 1)?),
                        NoiseSchedule::PowerDecay { sigma, gamma } => RiderTerm {
                            samples: r.samples,
                            phi: 0.0,
                            phi_decay: Some(Decay {
                                scale: sigma,
                                exponent: gamma,
                            }),
                            calibrated: false,
                        },
                        // only the exponent matters for the limit; the fitted σ is not known yet
                        NoiseSchedule::Calibrated { gamma, multiplier } => RiderTerm {
                            samples: r.samples,
                            phi: 0.0,
                            phi_decay: Some(Decay {
                                scale: multiplier,
                                exponent: gamma,
                            }),
                            calibrated: true,
                        },
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(fair, riders)
    }

    pub fn validate(&self) -> Result<()> {
        for (j, f) in self.fair.iter().enumerate() {
            if f.samples == 0 {
                return Err(Error::domain(format!("fair client {j} declares zero samples")));
            }
            if !(f.eta > 0.0 && f.eta < 1.0) {
                return Err(Error::domain(format!("fair client {j}: eta must lie in (0,1)")));
            }
            if !(f.rho.is_finite() && f.rho >= 0.0) {
                return Err(Error::domain(format!("fair client {j}: rho must be >= 0")));
            }
        }
        for (k, r) in self.riders.iter().enumerate() {
            if r.samples == 0 {
                return Err(Error::domain(format!("free-rider {k} declares zero samples")));
            }
            if !(r.phi.is_finite() && r.phi >= 0.0) {
                return Err(Error::domain(format!("free-rider {k}: phi must be >= 0")));
            }
        }
        if self.fair.is_empty() && self.riders.is_empty() {
            return Err(Error::structural("theory inputs have no clients"));
        }
        Ok(())
    }

    /// `M_J`.
    pub fn fair_total(&self) -> u64 {
        self.fair.iter().map(|f| f.samples).sum()
    }

    /// `M_K`.
    pub fn rider_total(&self) -> u64 {
        self.riders.iter().map(|r| r.samples).sum()
    }

    /// `N`.
    pub fn total(&self) -> u64 {
        self.fair_total() + self.rider_total()
    }

    /// `ε = Σ_j (M_j/N)·η_j`.
    pub fn epsilon(&self) -> f64 {
        let n = self.total() as f64;
        self.fair.iter().map(|f| f.samples as f64 / n * f.eta).sum()
    }

    /// `ε + M_K/N`, the geometric ratio of the attacked recursion.
    pub fn ratio(&self) -> f64 {
        self.epsilon() + self.rider_total() as f64 / self.total() as f64
    }

    /// Contraction of the fair-only recursion, `Σ_j (M_j/M_J)·η_j`.
    pub fn fair_ratio(&self) -> f64 {
        let mj = self.fair_total() as f64;
        self.fair.iter().map(|f| f.samples as f64 / mj * f.eta).sum()
    }

    /// Fails when the attacked recursion does not contract.
    pub fn check_convergent(&self) -> Result<()> {
        if self.fair.is_empty() || self.rider_total() >= self.total() {
            return Err(Error::domain(
                "M_K = N (only free-riders): eps + M_K/N = 1 and the asymptotic variance diverges",
            ));
        }
        let h = self.ratio();
        if h >= 1.0 {
            return Err(Error::domain(format!(
                "eps + M_K/N = {h} >= 1: the asymptotic variance diverges"
            )));
        }
        Ok(())
    }

    fn fair_noise_sum(&self) -> f64 {
        self.fair.iter().map(|f| (f.samples as f64 * f.rho).powi(2)).sum()
    }

    fn rider_noise_sum(&self) -> f64 {
        self.riders.iter().map(|r| (r.samples as f64 * r.phi).powi(2)).sum()
    }
}

/// Plain free-riding limit
/// `[1/N² + 1/(N−M_K)²]·Σ_j (M_j ρ_j)² / (1 − (ε + M_K/N)²)`.
/// The limiting mean of `θ̃^t − θ^t` is zero.
pub fn plain_asymptotic_variance(inputs: &TheoryInputs) -> Result<f64> {
    inputs.check_convergent()?;
    let n = inputs.total() as f64;
    let nf = (inputs.total() - inputs.rider_total()) as f64;
    let h = inputs.ratio();
    Ok((1.0 / (n * n) + 1.0 / (nf * nf)) * inputs.fair_noise_sum() / (1.0 - h * h))
}

/// Disguised free-riding limit: the plain value plus
/// `Σ_k (M_k/N)² φ_k² / (1 − (ε + M_K/N)²)`.
pub fn disguised_asymptotic_variance(inputs: &TheoryInputs) -> Result<f64> {
    let plain = plain_asymptotic_variance(inputs)?;
    let n = inputs.total() as f64;
    let h = inputs.ratio();
    Ok(plain + inputs.rider_noise_sum() / (n * n) / (1.0 - h * h))
}

/// Limit under time-varying noise. Each `ρ_j^t`, `φ_k(t)` must converge; the
/// result is the disguised formula evaluated at the limits (0 when every
/// schedule vanishes).
pub fn decaying_noise_asymptotic_variance(inputs: &TheoryInputs) -> Result<f64> {
    let decays = inputs
        .fair
        .iter()
        .filter_map(|f| f.rho_decay)
        .chain(inputs.riders.iter().filter_map(|r| r.phi_decay));
    for d in decays {
        d.validate()?;
        if !d.converges() {
            return Err(Error::domain(format!(
                "noise schedule {}·t^(-{}) has no limit",
                d.scale, d.exponent
            )));
        }
    }
    disguised_asymptotic_variance(inputs)
}

/// FedProx limit: primed `η'`, `ρ'` are derived from each client's physics
/// and `mu`, then the disguised formula is applied.
pub fn fedprox_asymptotic_variance(inputs: &TheoryInputs, mu: f64) -> Result<f64> {
    let fair = inputs
        .fair
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let p = f
                .physics
                .ok_or_else(|| Error::Unsupported(format!("fair client {j} has no physical constants for FedProx")))?;
            let c = fedprox_coefficients(p.lr, p.curvature, mu, p.sigma, p.epochs, f.samples, p.batch)?;
            Ok(FairTerm {
                eta: c.eta,
                rho: c.rho,
                ..*f
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let primed = TheoryInputs::new(fair, inputs.riders.clone())?;
    decaying_noise_asymptotic_variance(&primed)
}

/// Exact `lim Var[θ̃^t − θ^t]` for independent attacked and fair-only runs:
/// `(Σ(M_jρ_j)² + Σ(M_kφ_k)²)/N² / (1 − H²) + Σ(M_jρ_j)²/M_J² / (1 − ε_J²)`
/// with `H = ε + M_K/N` and `ε_J = Σ_j (M_j/M_J)·η_j`.
pub fn stationary_variance(inputs: &TheoryInputs) -> Result<f64> {
    inputs.check_convergent()?;
    let n = inputs.total() as f64;
    let mj = inputs.fair_total() as f64;
    let h = inputs.ratio();
    let ef = inputs.fair_ratio();
    let attacked = (inputs.fair_noise_sum() + inputs.rider_noise_sum()) / (n * n) / (1.0 - h * h);
    let fair = inputs.fair_noise_sum() / (mj * mj) / (1.0 - ef * ef);
    Ok(attacked + fair)
}

/// Exact `Var[θ̃^t − θ^t]` after `t` rounds from a deterministic `θ⁰`, with
/// the round-`i` upload using schedule index `i + 1`.
pub fn finite_horizon_variance(inputs: &TheoryInputs, t: usize) -> Result<f64> {
    if inputs.riders.iter().any(|r| r.calibrated) {
        return Err(Error::Unsupported(
            "calibrated free-riders have a data-dependent noise scale".into(),
        ));
    }
    if inputs.fair.is_empty() {
        return Ok(0.0);
    }
    let n = inputs.total() as f64;
    let mj = inputs.fair_total() as f64;
    let h = inputs.ratio();
    let ef = inputs.fair_ratio();
    let (mut va, mut vf) = (0.0, 0.0);
    for i in 0..t as u64 {
        let tau = i + 1;
        let fair_noise: f64 = inputs
            .fair
            .iter()
            .map(|f| (f.samples as f64 * f.rho_at(tau)).powi(2))
            .sum();
        let rider_noise: f64 = inputs
            .riders
            .iter()
            .map(|r| (r.samples as f64 * r.phi_at(tau)).powi(2))
            .sum();
        va = h * h * va + (fair_noise + rider_noise) / (n * n);
        vf = ef * ef * vf + fair_noise / (mj * mj);
    }
    Ok(va + vf)
}

/// Plain asymptotic variance at one value of `M_K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rider_samples: u64,
    pub total_samples: u64,
    pub variance: f64,
    /// `(M_K²/M_J² + 2M_K/M_J + 2) / (M_J² + 2M_K(M_J − α) − α²)`, `α = Σ M_jη_j`.
    pub rational_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub points: Vec<GridPoint>,
    /// Every consecutive pair of grid points increases (in both columns).
    pub strictly_increasing: bool,
}

/// Evaluates the plain asymptotic variance over a grid of declared free-rider
/// totals `M_K`, holding the fair clients fixed.
pub fn variance_monotonic_in_mk(fair: &[FairTerm], grid: &[u64]) -> Result<MonotonicityReport> {
    let mj = fair.iter().map(|f| f.samples).sum::<u64>() as f64;
    let alpha: f64 = fair.iter().map(|f| f.samples as f64 * f.eta).sum();
    let noise: f64 = fair.iter().map(|f| (f.samples as f64 * f.rho).powi(2)).sum();
    let points = grid
        .iter()
        .map(|&mk| {
            let riders = if mk == 0 { vec![] } else { vec![RiderTerm::plain(mk)] };
            let inputs = TheoryInputs::new(fair.to_vec(), riders)?;
            let k = mk as f64;
            let rational_factor =
                (k * k / (mj * mj) + 2.0 * k / mj + 2.0) / (mj * mj + 2.0 * k * (mj - alpha) - alpha * alpha);
            let variance = plain_asymptotic_variance(&inputs)?;
            debug_assert!((variance - rational_factor * noise).abs() <= 1e-9 * variance.max(1e-300));
            Ok(GridPoint {
                rider_samples: mk,
                total_samples: inputs.total(),
                variance,
                rational_factor,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let strictly_increasing = points
        .windows(2)
        .all(|w| w[1].variance > w[0].variance && w[1].rational_factor > w[0].rational_factor);
    Ok(MonotonicityReport {
        points,
        strictly_increasing,
    })
}
