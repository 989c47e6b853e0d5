//! Scenario fixtures shared by the benchmarks.

use freeride_core::harness::synthetic::SyntheticLogistic;
use freeride_core::{
    FairClient, FreeRiderSpec, LossModel, NoiseSchedule, OuClientSpec, ParameterVector, Scenario, Scheme, SgdClientSpec,
};

/// `fair` OU clients of 100 samples (η = 0.5, ρ = 0.1) plus `riders`
/// disguised free-riders with `φ = 0.2`, in `dim` dimensions.
pub fn ou_scenario(fair: usize, riders: usize, dim: usize, rounds: usize) -> Scenario {
    let fair = (0..fair)
        .map(|j| {
            let star = ParameterVector::splat(dim, j as f64).unwrap();
            FairClient::Ou(OuClientSpec::new(100, 0.5, star, 0.1).unwrap())
        })
        .collect();
    let riders = vec![FreeRiderSpec::disguised(100, NoiseSchedule::Fixed { phi: 0.2 }); riders];
    Scenario::new(
        fair,
        riders,
        Scheme::FedAvg,
        rounds,
        ParameterVector::zeros(dim).unwrap(),
        1,
    )
    .unwrap()
}

/// `fair` logistic SGD clients on synthetic data plus one calibrated rider.
pub fn sgd_scenario(fair: usize, samples: usize, features: usize, rounds: usize) -> Scenario {
    let data = SyntheticLogistic {
        samples,
        features,
        seed: 1,
        shift: 0.0,
    };
    let fair = (0..fair)
        .map(|j| {
            FairClient::Sgd(
                SgdClientSpec::new(data.generate(j as u64).unwrap(), LossModel::Logistic, 0.1, 1, 10).unwrap(),
            )
        })
        .collect();
    let riders = vec![FreeRiderSpec::disguised(
        samples as u64,
        NoiseSchedule::Calibrated {
            gamma: 1.0,
            multiplier: 1.0,
        },
    )];
    Scenario::new(
        fair,
        riders,
        Scheme::FedAvg,
        rounds,
        ParameterVector::zeros(features + 1).unwrap(),
        1,
    )
    .unwrap()
}
