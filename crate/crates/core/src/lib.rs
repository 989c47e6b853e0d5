//! Simulator and analytics for free-rider attacks on model-averaging
//! federated learning (FedAvg, FedProx).
//!
//! Module map:
//! - [`types`]: parameter vectors, sample weights, weighted averaging
//! - [`local`]: OU and minibatch-SGD fair clients, FedAvg/FedProx coefficients
//! - [`attacks`]: plain and disguised free-rider updates
//! - [`federation`]: round orchestration, coupled runs, recurrence oracle
//! - [`theory`]: closed-form asymptotic variances
//! - [`detection`]: server-side inspection of uploads
//! - [`harness`]: scenario files, Monte Carlo, SGD band experiment, export

pub mod attacks;
pub mod detection;
pub mod error;
pub mod federation;
pub mod harness;
pub mod local;
pub mod rng;
pub mod theory;
pub mod types;

pub use attacks::{FreeRiderSpec, NoiseSchedule, Strategy};
pub use error::{Error, Result};
pub use federation::{
    recurrence_difference, run_coupled, run_training, CoupledTrace, FairClient, RoundTrace, Scenario, Scheme,
};
pub use local::{LossModel, OuClientSpec, OuPhysics, ProxConfig, Sample, SgdClientSpec};
pub use theory::TheoryInputs;
pub use types::{weighted_average, ParameterVector, SampleWeights};
