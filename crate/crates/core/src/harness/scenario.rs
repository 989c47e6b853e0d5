//! JSON scenario files.
//!
//! ```json
//! {
//!   "fair_clients": [
//!     {"kind": "ou", "samples": 100, "theta_star": [0.0], "eta": 0.5, "rho": 0.1}
//!   ],
//!   "free_riders": [{"samples": 100, "strategy": {"kind": "plain"}}],
//!   "scheme": {"type": "fedavg"},
//!   "rounds": 200,
//!   "seed": 7
//! }
//! ```
//!
//! Defaults: `rounds` 100, `seed` 0, `theta0` zeros, `replicate_count` 1,
//! `scheme` FedAvg, no free-riders. OU clients give either `eta`/`rho` or
//! `physics`; under FedProx only `physics` is accepted, since the primed
//! coefficients depend on `mu`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::montecarlo::DEFAULT_CHECKPOINTS;
use super::synthetic::SyntheticLogistic;
use crate::attacks::FreeRiderSpec;
use crate::error::{Error, Result};
use crate::federation::{FairClient, Scenario, Scheme};
use crate::local::{Decay, LossModel, OuClientSpec, OuPhysics, Sample, SgdClientSpec};
use crate::types::ParameterVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub fair_clients: Vec<FairClientFile>,
    #[serde(default)]
    pub free_riders: Vec<FreeRiderSpec>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "default_replicates")]
    pub replicate_count: usize,
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_rounds() -> usize {
    100
}

fn default_replicates() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FairClientFile {
    Ou {
        samples: u64,
        theta_star: Vec<f64>,
        eta: Option<f64>,
        rho: Option<f64>,
        physics: Option<OuPhysics>,
        rho_decay: Option<Decay>,
    },
    Sgd {
        loss: LossModel,
        lr: f64,
        epochs: u32,
        batch: usize,
        data: DataSource,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Inline(Vec<Sample>),
    Synthetic(SyntheticLogistic),
}

/// A validated scenario together with the run settings of its file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub replicates: usize,
    pub checkpoints: Vec<usize>,
    pub output: OutputPaths,
}

fn field_err(field: String) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::Invalid { .. } => e,
        other => Error::invalid(field, other.to_string()),
    }
}

impl ScenarioFile {
    /// Builds and validates the scenario, naming the offending field on failure.
    pub fn into_loaded(self) -> Result<LoadedScenario> {
        let prox = self.scheme.prox();
        if let Scheme::FedProx { mu } = self.scheme {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::invalid("scheme.mu", format!("must be >= 0, got {mu}")));
            }
        }
        let mut fair = Vec::with_capacity(self.fair_clients.len());
        for (j, c) in self.fair_clients.into_iter().enumerate() {
            let at = |f: &str| format!("fair_clients[{j}].{f}");
            let client = match c {
                FairClientFile::Ou {
                    samples,
                    theta_star,
                    eta,
                    rho,
                    physics,
                    rho_decay,
                } => {
                    if samples == 0 {
                        return Err(Error::invalid(at("samples"), "must be >= 1"));
                    }
                    let theta_star = ParameterVector::new(theta_star).map_err(field_err(at("theta_star")))?;
                    let spec = match (eta, rho, physics) {
                        (None, None, Some(p)) => OuClientSpec::from_physics(samples, &p, theta_star, prox)
                            .map_err(field_err(at("physics")))?,
                        (Some(_), _, _) | (_, Some(_), _) if matches!(self.scheme, Scheme::FedProx { .. }) => {
                            return Err(Error::invalid(
                                at("eta"),
                                "FedProx needs `physics` to derive the primed coefficients",
                            ))
                        }
                        (Some(eta), Some(rho), None) => {
                            OuClientSpec::new(samples, eta, theta_star, rho).map_err(field_err(at("eta")))?
                        }
                        _ => {
                            return Err(Error::invalid(
                                format!("fair_clients[{j}]"),
                                "give either both `eta` and `rho` or `physics`",
                            ))
                        }
                    };
                    let spec = match rho_decay {
                        Some(d) => spec.with_decay(d).map_err(field_err(at("rho_decay")))?,
                        None => spec,
                    };
                    FairClient::Ou(spec)
                }
                FairClientFile::Sgd {
                    loss,
                    lr,
                    epochs,
                    batch,
                    data,
                } => {
                    let data = match data {
                        DataSource::Inline(d) => d,
                        DataSource::Synthetic(s) => s.generate(j as u64).map_err(field_err(at("data")))?,
                    };
                    if data.is_empty() {
                        return Err(Error::invalid(at("data"), "must hold at least one sample"));
                    }
                    FairClient::Sgd(
                        SgdClientSpec::new(data, loss, lr, epochs, batch)
                            .map_err(field_err(format!("fair_clients[{j}]")))?,
                    )
                }
            };
            fair.push(client);
        }
        for (k, r) in self.free_riders.iter().enumerate() {
            if r.samples == 0 {
                return Err(Error::invalid(format!("free_riders[{k}].samples"), "must be >= 1"));
            }
            r.validate().map_err(field_err(format!("free_riders[{k}].strategy")))?;
        }
        let dim = match (&self.theta0, fair.first()) {
            (Some(t), _) => t.len(),
            (None, Some(c)) => c.dim(),
            (None, None) => return Err(Error::invalid("theta0", "required when there are no fair clients")),
        };
        for (j, c) in fair.iter().enumerate() {
            if c.dim() != dim {
                return Err(Error::invalid(
                    format!("fair_clients[{j}]"),
                    format!("dimension {} differs from {dim}", c.dim()),
                ));
            }
        }
        let theta0 = match self.theta0 {
            Some(t) => ParameterVector::new(t).map_err(field_err("theta0".into()))?,
            None => ParameterVector::zeros(dim).map_err(field_err("theta0".into()))?,
        };
        if self.replicate_count == 0 {
            return Err(Error::invalid("replicate_count", "must be >= 1"));
        }
        let checkpoints = match self.checkpoints {
            Some(c) => {
                if c.is_empty() {
                    return Err(Error::invalid("checkpoints", "must not be empty"));
                }
                c
            }
            None => DEFAULT_CHECKPOINTS.to_vec(),
        };
        let scenario = Scenario::new(fair, self.free_riders, self.scheme, self.rounds, theta0, self.seed)
            .map_err(field_err("fair_clients".into()))?;
        Ok(LoadedScenario {
            scenario,
            replicates: self.replicate_count,
            checkpoints,
            output: self.output,
        })
    }
}

/// Parses scenario JSON; `origin` labels error messages.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<LoadedScenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })?;
    file.into_loaded()
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<LoadedScenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LoadedScenario> {
        parse_scenario(s, Path::new("test.json"))
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let l = parse(r#"{"fair_clients":[{"kind":"ou","samples":10,"theta_star":[1.0,2.0],"eta":0.5,"rho":0.1}]}"#)
            .unwrap();
        assert_eq!(l.scenario.rounds, 100);
        assert_eq!(l.replicates, 1);
        assert_eq!(l.scenario.seed, 0);
        assert_eq!(l.scenario.theta0.as_slice(), &[0.0, 0.0]);
        assert_eq!(l.scenario.scheme, Scheme::FedAvg);
        assert_eq!(l.checkpoints, vec![50, 100, 200]);
    }

    #[test]
    fn zero_samples_names_field() {
        let e = parse(r#"{"fair_clients":[{"kind":"ou","samples":0,"theta_star":[1.0],"eta":0.5,"rho":0.1}]}"#)
            .unwrap_err();
        assert!(e.to_string().contains("fair_clients[0].samples"), "{e}");
        let e = parse(
            r#"{"fair_clients":[{"kind":"ou","samples":3,"theta_star":[1.0],"eta":0.5,"rho":0.1}],
                "free_riders":[{"samples":0,"strategy":{"kind":"plain"}}]}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("free_riders[0].samples"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let e =
            parse(r#"{"fair_clients":[{"kind":"ou","samples":1,"theta_star":[1.0],"eta":0.5,"rho":0.1,"typo":1}]}"#)
                .unwrap_err();
        assert!(e.is_validation());
        assert!(e.to_string().contains("fair_clients[0]"), "{e}");
        assert!(parse(r#"{"fair_clients":[],"extra":true}"#).is_err());
    }

    #[test]
    fn rider_fractions_echo_n() {
        for (riders, n) in [(1usize, 600u64), (5, 1000), (45, 5000)] {
            let fair: Vec<String> = (0..5)
                .map(|i| format!(r#"{{"kind":"ou","samples":100,"theta_star":[{i}.0],"eta":0.5,"rho":0.1}}"#))
                .collect();
            let rider = r#"{"samples":100,"strategy":{"kind":"plain"}}"#;
            let text = format!(
                r#"{{"fair_clients":[{}],"free_riders":[{}]}}"#,
                fair.join(","),
                vec![rider; riders].join(",")
            );
            let l = parse(&text).unwrap();
            assert_eq!(l.scenario.total_samples(), n);
        }
    }

    #[test]
    fn fedprox_needs_physics() {
        let e = parse(
            r#"{"fair_clients":[{"kind":"ou","samples":100,"theta_star":[0.0],"eta":0.5,"rho":0.1}],
                "scheme":{"type":"fedprox","mu":1.0}}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("fair_clients[0].eta"), "{e}");
        let l = parse(
            r#"{"fair_clients":[{"kind":"ou","samples":100,"theta_star":[0.0],
                "physics":{"lr":0.1,"curvature":1.0,"sigma":1.0,"epochs":1,"batch":10}}],
                "scheme":{"type":"fedprox","mu":1.0}}"#,
        )
        .unwrap();
        let FairClient::Ou(c) = &l.scenario.fair[0] else {
            panic!()
        };
        // λ(r+μ)·EM/S = 0.1·2·10
        let g = (-2.0f64).exp();
        assert!((c.eta - (g + 0.5 * (1.0 - g))).abs() < 1e-15);
    }

    #[test]
    fn synthetic_sgd_clients() {
        let l = parse(
            r#"{"fair_clients":[{"kind":"sgd","loss":{"kind":"logistic"},"lr":0.1,"epochs":1,"batch":10,
                "data":{"synthetic":{"samples":40,"features":2,"seed":3}}}],"rounds":5}"#,
        )
        .unwrap();
        assert_eq!(l.scenario.dim(), 3);
        assert_eq!(l.scenario.total_samples(), 40);
        let e = parse(
            r#"{"fair_clients":[{"kind":"sgd","loss":{"kind":"logistic"},"lr":0.1,"epochs":1,"batch":7,
                "data":{"synthetic":{"samples":40,"features":2,"seed":3}}}]}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("fair_clients[0]"), "{e}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let e = load_scenario("/nonexistent/dir/s.json").unwrap_err();
        assert!(!e.is_validation());
        assert!(e.to_string().contains("/nonexistent/dir/s.json"));
    }
}
