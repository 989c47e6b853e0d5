//! User-facing plumbing: scenario files, Monte Carlo replication, the SGD
//! band experiment, synthetic data and export.

pub mod band;
pub mod export;
pub mod montecarlo;
pub mod scenario;
pub mod synthetic;

pub use band::{band_experiment, BandReport};
pub use export::{
    read_json, read_trace_csv, write_detection_csv, write_json, write_report_csv, write_trace, write_trace_csv, Format,
    TraceRow,
};
pub use montecarlo::{monte_carlo, CheckpointMoments, MomentReport, DEFAULT_CHECKPOINTS};
pub use scenario::{load_scenario, parse_scenario, LoadedScenario, OutputPaths, ScenarioFile};
