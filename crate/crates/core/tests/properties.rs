use proptest::prelude::*;

use freeride_core::theory::{
    disguised_asymptotic_variance, fedprox_asymptotic_variance, plain_asymptotic_variance, stationary_variance,
    FairTerm, RiderTerm, TheoryInputs,
};
use freeride_core::{
    recurrence_difference, run_coupled, FairClient, FreeRiderSpec, NoiseSchedule, OuClientSpec, OuPhysics,
    ParameterVector, Scenario, Scheme,
};

fn fair_term() -> impl Strategy<Value = FairTerm> {
    (1u64..500, 0.01f64..0.99, 0.0f64..1.0).prop_map(|(m, eta, rho)| FairTerm::new(m, eta, rho))
}

fn rider() -> impl Strategy<Value = FreeRiderSpec> {
    prop_oneof![
        (1u64..300).prop_map(FreeRiderSpec::plain),
        (1u64..300, 0.0f64..1.0).prop_map(|(m, phi)| FreeRiderSpec::disguised(m, NoiseSchedule::Fixed { phi })),
        (1u64..300, 0.0f64..1.0, 0.1f64..3.0)
            .prop_map(|(m, sigma, gamma)| FreeRiderSpec::disguised(m, NoiseSchedule::PowerDecay { sigma, gamma })),
        (1u64..300, 0.1f64..3.0).prop_map(|(m, multiplier)| FreeRiderSpec::disguised(
            m,
            NoiseSchedule::Calibrated { gamma: 1.0, multiplier }
        )),
    ]
}

fn ou_client(dim: usize) -> impl Strategy<Value = FairClient> {
    (
        1u64..300,
        0.01f64..0.99,
        0.0f64..0.5,
        prop::collection::vec(-3.0f64..3.0, dim),
    )
        .prop_map(|(m, eta, rho, star)| {
            FairClient::Ou(OuClientSpec::new(m, eta, ParameterVector::new(star).unwrap(), rho).unwrap())
        })
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (1usize..4).prop_flat_map(|dim| {
        (
            prop::collection::vec(ou_client(dim), 1..6),
            prop::collection::vec(rider(), 0..4),
            prop::collection::vec(-1.0f64..1.0, dim),
            any::<u64>(),
        )
            .prop_map(|(fair, riders, theta0, seed)| {
                Scenario::new(
                    fair,
                    riders,
                    Scheme::FedAvg,
                    30,
                    ParameterVector::new(theta0).unwrap(),
                    seed,
                )
                .unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn recurrence_matches_direct_difference(s in scenario()) {
        let coupled = run_coupled(&s).unwrap();
        for t in 0..=s.rounds {
            let rec = recurrence_difference(&coupled, t).unwrap();
            let direct = coupled.direct_difference(t).unwrap();
            for (a, b) in rec.iter().zip(&direct) {
                prop_assert!((a - b).abs() <= 1e-9, "t={} {} vs {}", t, a, b);
            }
        }
    }

    #[test]
    fn plain_bounded_by_disguised(fair in prop::collection::vec(fair_term(), 1..5), mk in 1u64..1000, phi in 0.0f64..2.0) {
        let i = TheoryInputs::new(fair, vec![RiderTerm::fixed(mk, phi)]).unwrap();
        let p = plain_asymptotic_variance(&i).unwrap();
        let d = disguised_asymptotic_variance(&i).unwrap();
        prop_assert!(p >= 0.0 && p <= d && d.is_finite());
        prop_assert!(stationary_variance(&i).unwrap() >= 0.0);
    }

    #[test]
    fn plain_variance_increases_for_large_mk(fair in prop::collection::vec(fair_term(), 1..5), k in 1u64..100) {
        // beyond M_K = M_J the rational factor is increasing for any fair clients
        let mj: u64 = fair.iter().map(|f| f.samples).sum();
        let at = |mk: u64| plain_asymptotic_variance(&TheoryInputs::new(fair.clone(), vec![RiderTerm::plain(mk)]).unwrap()).unwrap();
        let (a, b) = (at(mj * k), at(mj * k + mj));
        prop_assert!(b >= a, "{} then {}", a, b);
    }

    #[test]
    fn fedprox_reduces_to_fedavg_at_zero_mu(m in 1u64..50, lr in 0.01f64..0.3, r in 0.2f64..3.0, sigma in 0.1f64..3.0, epochs in 1u32..4, mk in 1u64..300) {
        let physics = OuPhysics { lr, curvature: r, sigma, epochs, batch: 10 };
        let samples = 10 * m;
        let (eta, rho) = physics.coefficients(samples, Default::default()).unwrap();
        prop_assume!(eta > 0.0 && eta < 1.0);
        let i = TheoryInputs::new(
            vec![FairTerm { physics: Some(physics), ..FairTerm::new(samples, eta, rho) }],
            vec![RiderTerm::plain(mk)],
        ).unwrap();
        prop_assert_eq!(fedprox_asymptotic_variance(&i, 0.0).unwrap(), plain_asymptotic_variance(&i).unwrap());
    }
}
