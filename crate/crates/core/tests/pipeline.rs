use freeride_core::detection::detect;
use freeride_core::harness::{load_scenario, monte_carlo, read_json, read_trace_csv, write_trace, Format};
use freeride_core::theory::{plain_asymptotic_variance, TheoryInputs};
use freeride_core::{run_training, RoundTrace};

const SCENARIO: &str = r#"{
  "fair_clients": [
    {"kind": "ou", "samples": 100, "theta_star": [0.0, 1.0], "eta": 0.5, "rho": 0.1},
    {"kind": "ou", "samples": 100, "theta_star": [0.0, -1.0], "eta": 0.5, "rho": 0.1}
  ],
  "free_riders": [
    {"samples": 60, "strategy": {"kind": "plain"}},
    {"samples": 40, "strategy": {"kind": "disguised", "schedule": {"kind": "fixed", "phi": 0.2}}}
  ],
  "rounds": 40,
  "seed": 3,
  "replicate_count": 50,
  "checkpoints": [10, 40]
}"#;

#[test]
fn load_simulate_export_detect() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, SCENARIO).unwrap();
    let loaded = load_scenario(&path).unwrap();
    assert_eq!(loaded.scenario.total_samples(), 300);
    assert_eq!(loaded.replicates, 50);

    let trace = run_training(&loaded.scenario).unwrap();
    let csv = dir.path().join("t.csv");
    write_trace(&trace, &csv, Format::Csv).unwrap();
    assert_eq!(read_trace_csv(&csv).unwrap().len(), 40 * 4);

    let json = dir.path().join("t.json");
    write_trace(&trace, &json, Format::Json).unwrap();
    let back: Vec<RoundTrace> = read_json(&json).unwrap();
    assert_eq!(back, trace);
    let report = detect(&back, 0.0).unwrap();
    let flagged: Vec<usize> = report.clients.iter().map(|c| c.flagged_rounds).collect();
    assert_eq!(flagged, vec![0, 0, 40, 0]);
}

#[test]
fn monte_carlo_reports_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, SCENARIO).unwrap();
    let loaded = load_scenario(&path).unwrap();
    let report = monte_carlo(&loaded.scenario, loaded.replicates, &loaded.checkpoints).unwrap();
    let inputs = TheoryInputs::from_scenario(&loaded.scenario).unwrap();
    assert!(plain_asymptotic_variance(&inputs).unwrap() < report.checkpoints[1].theory_variance);
    for c in &report.checkpoints {
        assert_eq!(c.mean.len(), 2);
        assert_eq!(c.replicates, 50);
        for d in 0..2 {
            assert!((c.variance_standard_error[d] - (2.0f64 / 49.0).sqrt() * c.variance[d]).abs() < 1e-15);
        }
    }
}
