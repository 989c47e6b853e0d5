//! Monte Carlo estimation of the moments of `θ̃^t − θ^t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{run_coupled, Scenario};
use crate::rng::replicate_seed;
use crate::theory::{decaying_noise_asymptotic_variance, finite_horizon_variance, stationary_variance, TheoryInputs};

pub const DEFAULT_CHECKPOINTS: [usize; 3] = [50, 100, 200];

/// Moments at one checkpoint; vectors are per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMoments {
    pub round: usize,
    pub replicates: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// `sqrt(variance / R)`.
    pub mean_standard_error: Vec<f64>,
    /// `sqrt(2/(R−1))·variance`.
    pub variance_standard_error: Vec<f64>,
    /// Limiting mean of the difference (zero).
    pub theory_mean: f64,
    /// Closed-form asymptotic variance; identical across coordinates.
    pub theory_variance: f64,
    /// Exact variance after `round` rounds of two independent runs, when the
    /// noise schedules are known in advance.
    pub exact_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub seed: u64,
    pub replicates: usize,
    pub total_samples: u64,
    pub rider_samples: u64,
    pub ratio: f64,
    /// Exact `t → ∞` variance of two independent runs.
    pub stationary_variance: f64,
    pub checkpoints: Vec<CheckpointMoments>,
}

/// Runs `replicates` coupled simulations with sub-seeds derived from
/// `scenario.seed` and summarises `θ̃^t − θ^t` at each checkpoint.
///
/// Replicates run in parallel; their results are collected in replicate order
/// and reduced sequentially, so the report does not depend on scheduling.
pub fn monte_carlo(scenario: &Scenario, replicates: usize, checkpoints: &[usize]) -> Result<MomentReport> {
    if replicates < 2 {
        return Err(Error::invalid("replicates", format!("must be >= 2, got {replicates}")));
    }
    if checkpoints.is_empty() {
        return Err(Error::invalid("checkpoints", "must not be empty"));
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("checkpoints", "must be strictly increasing"));
    }
    if scenario.has_sgd_clients() {
        return Err(Error::Unsupported(
            "Monte Carlo theory comparison needs OU fair clients, not SGD clients".into(),
        ));
    }
    let inputs = TheoryInputs::from_scenario(scenario)?;
    inputs.check_convergent()?;
    let theory_variance = decaying_noise_asymptotic_variance(&inputs)?;
    let stationary = stationary_variance(&inputs)?;

    let horizon = *checkpoints.last().expect("non-empty");
    let base = Scenario {
        rounds: horizon,
        ..scenario.clone()
    };
    let dim = scenario.dim();
    let samples: Vec<Vec<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let coupled = run_coupled(&base.with_seed(replicate_seed(scenario.seed, r as u64)))?;
            checkpoints.iter().map(|&t| coupled.direct_difference(t)).collect()
        })
        .collect::<Result<_>>()?;

    let rf = replicates as f64;
    let checkpoints = checkpoints
        .iter()
        .enumerate()
        .map(|(c, &round)| {
            let mut mean = vec![0.0; dim];
            for s in &samples {
                for (m, x) in mean.iter_mut().zip(&s[c]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rf);
            let mut variance = vec![0.0; dim];
            for s in &samples {
                for ((v, x), m) in variance.iter_mut().zip(&s[c]).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            variance.iter_mut().for_each(|v| *v /= rf - 1.0);
            Ok(CheckpointMoments {
                round,
                replicates,
                mean_standard_error: variance.iter().map(|v| (v / rf).sqrt()).collect(),
                variance_standard_error: variance.iter().map(|v| (2.0 / (rf - 1.0)).sqrt() * v).collect(),
                mean,
                variance,
                theory_mean: 0.0,
                theory_variance,
                exact_variance: finite_horizon_variance(&inputs, round).ok(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentReport {
        seed: scenario.seed,
        replicates,
        total_samples: inputs.total(),
        rider_samples: inputs.rider_total(),
        ratio: inputs.ratio(),
        stationary_variance: stationary,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::FreeRiderSpec;
    use crate::federation::{FairClient, Scheme};
    use crate::local::OuClientSpec;
    use crate::types::ParameterVector;

    fn scenario(riders: Vec<FreeRiderSpec>) -> Scenario {
        let star = ParameterVector::new(vec![0.0]).unwrap();
        let fair = vec![FairClient::Ou(OuClientSpec::new(100, 0.5, star, 0.1).unwrap()); 2];
        Scenario::new(fair, riders, Scheme::FedAvg, 0, ParameterVector::zeros(1).unwrap(), 11).unwrap()
    }

    #[test]
    fn rejects_bad_requests() {
        let s = scenario(vec![FreeRiderSpec::plain(100)]);
        assert!(monte_carlo(&s, 1, &[10]).unwrap_err().is_validation());
        assert!(monte_carlo(&s, 10, &[]).is_err());
        assert!(monte_carlo(&s, 10, &[20, 10]).is_err());
    }

    #[test]
    fn divergent_gate() {
        let s = Scenario::new(
            vec![],
            vec![FreeRiderSpec::plain(10)],
            Scheme::FedAvg,
            10,
            ParameterVector::zeros(1).unwrap(),
            0,
        )
        .unwrap();
        let e = monte_carlo(&s, 100, &[10]).unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("diverges"), "{e}");
    }

    #[test]
    fn matches_exact_variance_and_is_reproducible() {
        let s = scenario(vec![FreeRiderSpec::plain(100)]);
        let a = monte_carlo(&s, 4000, &[5, 60]).unwrap();
        let b = monte_carlo(&s, 4000, &[5, 60]).unwrap();
        assert_eq!(a, b);
        assert!((a.checkpoints[1].theory_variance - 0.013).abs() < 1e-12);
        for c in &a.checkpoints {
            let exact = c.exact_variance.unwrap();
            assert!(
                (c.variance[0] - exact).abs() < 4.0 * c.variance_standard_error[0],
                "{c:?}"
            );
            assert!(c.mean[0].abs() < 4.0 * c.mean_standard_error[0]);
        }
        assert!((a.stationary_variance - (0.004 + 0.02 / 3.0)).abs() < 1e-12);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<MomentReport>(&json).unwrap(), a);
    }
}
