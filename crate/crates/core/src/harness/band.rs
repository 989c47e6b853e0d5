//! SGD-level experiment: does an attacked run stay inside the spread of
//! fair-only runs?
//!
//! One attacked run (fair SGD clients plus free-riders) is compared with
//! `fair_seeds` fair-only runs that differ only in their seed. Success is
//! membership of the attacked final training loss in the min–max band of the
//! fair-only final losses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{FairClient, Federation, RoundTrace, Scenario};
use crate::rng::{replicate_seed, Purpose, RunId, StreamKey};
use crate::types::ParameterVector;

/// Fraction of the rounds forming the tail window of the loss curve.
pub const TAIL_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub fair_seeds: usize,
    /// Global training loss of the attacked run at `θ⁰, θ¹, …, θ^T`.
    pub attacked_losses: Vec<f64>,
    pub attacked_final_loss: f64,
    pub fair_final_losses: Vec<f64>,
    pub band_min: f64,
    pub band_max: f64,
    pub inside_band: bool,
    /// `final − band_min`; negative below the band.
    pub margin_below: f64,
    /// `band_max − final`; negative above the band.
    pub margin_above: f64,
    /// Least-squares slope of the attacked loss over the tail window.
    pub tail_slope: f64,
    /// Final loss ≤ loss at the start of the tail window and `tail_slope ≤ 0`.
    pub tail_non_increasing: bool,
}

/// Sample-weighted mean training loss of the fair SGD clients at `theta`.
pub fn global_loss(fair: &[FairClient], theta: &ParameterVector) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0u64;
    for c in fair {
        match c {
            FairClient::Sgd(s) => {
                total += s.samples() as f64 * s.loss.loss(theta.as_slice(), &s.data);
                weight += s.samples();
            }
            FairClient::Ou(_) => {
                return Err(Error::Unsupported("the band experiment needs SGD fair clients".into()));
            }
        }
    }
    if weight == 0 {
        return Err(Error::Unsupported("the band experiment needs SGD fair clients".into()));
    }
    Ok(total / weight as f64)
}

fn initial(scenario: &Scenario, run: RunId, init_scale: f64) -> Result<ParameterVector> {
    if init_scale == 0.0 {
        return Ok(scenario.theta0.clone());
    }
    let z = StreamKey::new(scenario.seed, run, 0, u64::MAX, Purpose::Init).normals(scenario.dim());
    scenario
        .theta0
        .zip_map(&ParameterVector::new(z)?, |t, e| t + init_scale * e)
}

fn loss_curve(scenario: &Scenario, theta0: &ParameterVector, trace: &[RoundTrace]) -> Result<Vec<f64>> {
    std::iter::once(theta0)
        .chain(trace.iter().map(|r| &r.aggregate))
        .map(|t| global_loss(&scenario.fair, t))
        .collect()
}

fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Runs the attacked scenario and `fair_seeds` fair-only replicas. Each run
/// starts from `theta0` plus `init_scale` times its own Gaussian draw.
pub fn band_experiment(scenario: &Scenario, fair_seeds: usize, init_scale: f64) -> Result<BandReport> {
    if fair_seeds == 0 {
        return Err(Error::invalid("fair_seeds", "must be >= 1"));
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::invalid("init_scale", "must be >= 0"));
    }
    if scenario.fair.is_empty() || !scenario.fair.iter().all(|c| matches!(c, FairClient::Sgd(_))) {
        return Err(Error::Unsupported(
            "the band experiment needs SGD fair clients only".into(),
        ));
    }
    if scenario.rounds == 0 {
        return Err(Error::invalid("rounds", "must be >= 1"));
    }

    let theta0 = initial(scenario, RunId::Attacked, init_scale)?;
    let trace = Federation::attacked(scenario)?.run(&theta0, scenario.rounds)?;
    let attacked_losses = loss_curve(scenario, &theta0, &trace)?;

    let fair_final_losses: Vec<f64> = (0..fair_seeds)
        .into_par_iter()
        .map(|s| {
            let seeded = scenario.with_seed(replicate_seed(scenario.seed, s as u64));
            let theta0 = initial(&seeded, RunId::Fair, init_scale)?;
            let trace = Federation::fair_only(&seeded)?.run(&theta0, seeded.rounds)?;
            global_loss(&seeded.fair, &trace.last().expect("rounds >= 1").aggregate)
        })
        .collect::<Result<_>>()?;

    let attacked_final_loss = *attacked_losses.last().expect("non-empty");
    let band_min = fair_final_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let band_max = fair_final_losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = ((scenario.rounds as f64 * TAIL_FRACTION).ceil() as usize).max(1);
    let tail = &attacked_losses[attacked_losses.len() - 1 - window..];
    let tail_slope = ols_slope(tail);
    Ok(BandReport {
        fair_seeds,
        attacked_final_loss,
        fair_final_losses,
        band_min,
        band_max,
        inside_band: band_min <= attacked_final_loss && attacked_final_loss <= band_max,
        margin_below: attacked_final_loss - band_min,
        margin_above: band_max - attacked_final_loss,
        tail_slope,
        tail_non_increasing: tail_slope <= 0.0 && attacked_final_loss <= tail[0],
        attacked_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{FreeRiderSpec, NoiseSchedule};
    use crate::federation::Scheme;
    use crate::harness::synthetic::SyntheticLogistic;
    use crate::local::{LossModel, SgdClientSpec};

    fn scenario(riders: usize) -> Scenario {
        let fair = (0..3)
            .map(|j| {
                let data = SyntheticLogistic {
                    samples: 40,
                    features: 2,
                    seed: 4,
                    shift: 0.0,
                }
                .generate(j)
                .unwrap();
                FairClient::Sgd(SgdClientSpec::new(data, LossModel::Logistic, 0.1, 1, 10).unwrap())
            })
            .collect();
        let riders = vec![
            FreeRiderSpec::disguised(
                40,
                NoiseSchedule::Calibrated {
                    gamma: 1.0,
                    multiplier: 1.0
                }
            );
            riders
        ];
        Scenario::new(fair, riders, Scheme::FedAvg, 30, ParameterVector::zeros(3).unwrap(), 2).unwrap()
    }

    #[test]
    fn fair_seed_band_is_reported() {
        let r = band_experiment(&scenario(1), 6, 0.1).unwrap();
        assert_eq!(r.attacked_losses.len(), 31);
        assert_eq!(r.fair_final_losses.len(), 6);
        assert!(r.band_min <= r.band_max);
        assert_eq!(r.inside_band, r.margin_below >= 0.0 && r.margin_above >= 0.0);
        assert!(r.attacked_final_loss < r.attacked_losses[0]);
        assert_eq!(r, band_experiment(&scenario(1), 6, 0.1).unwrap());
    }

    #[test]
    fn rejects_ou_clients() {
        use crate::local::OuClientSpec;
        let s = Scenario::new(
            vec![FairClient::Ou(
                OuClientSpec::new(1, 0.5, ParameterVector::zeros(1).unwrap(), 0.1).unwrap(),
            )],
            vec![],
            Scheme::FedAvg,
            3,
            ParameterVector::zeros(1).unwrap(),
            0,
        )
        .unwrap();
        assert!(matches!(band_experiment(&s, 2, 0.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn slope() {
        assert!((ols_slope(&[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ols_slope(&[1.0]), 0.0);
    }
}
