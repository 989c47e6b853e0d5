//! Round-based federated orchestration with free-riders.
//!
//! Each round the server broadcasts `θ^t`; fair clients return local updates,
//! free-riders return the broadcast (plain) or the broadcast plus noise
//! (disguised), and the server forms the sample-weighted average over every
//! upload using the declared sample counts.
//!
//! [`run_coupled`] runs the fair-only federation and the attacked federation
//! side by side from the same `θ⁰` with independent, recorded noise, and
//! stores the ingredients of the closed-form recurrence for `θ̃^t − θ^t` so
//! that [`recurrence_difference`] can be checked against direct subtraction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{estimate_sigma, perturb, phi_at, plain_update, FreeRiderSpec, NoiseSchedule, Strategy};
use crate::error::{Error, Result};
use crate::local::{ou_local_update, sgd_local_update, OuClientSpec, ProxConfig, SgdClientSpec};
use crate::rng::{Purpose, RunId, StreamKey};
use crate::types::{weighted_average, ParameterVector, SampleWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FairClient {
    Ou(OuClientSpec),
    Sgd(SgdClientSpec),
}

impl FairClient {
    pub fn samples(&self) -> u64 {
        match self {
            FairClient::Ou(s) => s.samples,
            FairClient::Sgd(s) => s.samples(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FairClient::Ou(s) => s.theta_star.dim(),
            FairClient::Sgd(s) => s.dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            FairClient::Ou(s) => s.validate(),
            FairClient::Sgd(s) => s.validate(),
        }
    }
}

/// Aggregation scheme. For OU clients the proximal term is already folded
/// into their `η`/`ρ`; for SGD clients `mu` enters every local step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Scheme {
    #[default]
    FedAvg,
    FedProx {
        mu: f64,
    },
}

impl Scheme {
    pub fn prox(&self) -> ProxConfig {
        match *self {
            Scheme::FedAvg => ProxConfig::default(),
            Scheme::FedProx { mu } => ProxConfig { mu },
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub fair: Vec<FairClient>,
    pub riders: Vec<FreeRiderSpec>,
    pub scheme: Scheme,
    pub rounds: usize,
    pub theta0: ParameterVector,
    pub seed: u64,
}

impl Scenario {
    pub fn new(
        fair: Vec<FairClient>,
        riders: Vec<FreeRiderSpec>,
        scheme: Scheme,
        rounds: usize,
        theta0: ParameterVector,
        seed: u64,
    ) -> Result<Self> {
        let s = Self {
            fair,
            riders,
            scheme,
            rounds,
            theta0,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Only the degenerate all-free-rider federation may have no fair client.
    pub fn validate(&self) -> Result<()> {
        if self.fair.is_empty() && self.riders.is_empty() {
            return Err(Error::structural("scenario has no clients"));
        }
        if let Scheme::FedProx { mu } = self.scheme {
            ProxConfig::new(mu)?;
        }
        let dim = self.theta0.dim();
        for (j, c) in self.fair.iter().enumerate() {
            c.validate().map_err(|e| Error::Client {
                client: j,
                round: 0,
                source: Box::new(e),
            })?;
            if c.dim() != dim {
                return Err(Error::structural(format!(
                    "fair client {j} has dimension {}, theta0 has {dim}",
                    c.dim()
                )));
            }
        }
        for (k, r) in self.riders.iter().enumerate() {
            r.validate().map_err(|e| Error::Client {
                client: self.fair.len() + k,
                round: 0,
                source: Box::new(e),
            })?;
        }
        self.weights().map(|_| ())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.theta0.dim()
    }

    pub fn client_count(&self) -> usize {
        self.fair.len() + self.riders.len()
    }

    /// Declared weights of all clients, fair clients first.
    pub fn weights(&self) -> Result<SampleWeights> {
        SampleWeights::new(
            self.fair
                .iter()
                .map(FairClient::samples)
                .chain(self.riders.iter().map(|r| r.samples))
                .collect(),
        )
    }

    /// Weights of the fair clients alone (normalised by `N − M_K`).
    pub fn fair_weights(&self) -> Result<SampleWeights> {
        SampleWeights::new(self.fair.iter().map(FairClient::samples).collect())
    }

    /// `M_K`.
    pub fn rider_samples(&self) -> u64 {
        self.riders.iter().map(|r| r.samples).sum()
    }

    /// `N`.
    pub fn total_samples(&self) -> u64 {
        self.fair.iter().map(FairClient::samples).sum::<u64>() + self.rider_samples()
    }

    pub fn has_sgd_clients(&self) -> bool {
        self.fair.iter().any(|c| matches!(c, FairClient::Sgd(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Fair,
    Rider,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Fair => "fair",
            Role::Rider => "rider",
        }
    }
}

/// One client's contribution to a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client: usize,
    pub role: Role,
    pub params: ParameterVector,
    /// Standard normal draws `ζ_{j,t}` / `ε_{k,t}` (empty when none were used).
    pub noise: Vec<f64>,
    /// Scale applied to `noise`: `ρ_j^t` or `φ_k(t)`.
    pub noise_level: f64,
    /// Local training loss, SGD clients only.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    /// Global model `θ^t` sent to the clients.
    pub broadcast: ParameterVector,
    pub uploads: Vec<ClientUpload>,
    /// Declared sample counts, aligned with `uploads`.
    pub weights: Vec<u64>,
    /// `θ^{t+1}`, the weighted average of `uploads`.
    pub aggregate: ParameterVector,
}

impl RoundTrace {
    /// Recomputes the aggregate from the recorded uploads.
    pub fn replay(&self) -> Result<ParameterVector> {
        let params: Vec<ParameterVector> = self.uploads.iter().map(|u| u.params.clone()).collect();
        weighted_average(&params, &SampleWeights::new(self.weights.clone())?)
    }
}

/// Stateful driver of a single federation run.
///
/// Holds the free-riders' schedules so that a calibrated rider can fix its
/// `σ` once the first global increment `θ̃¹ − θ̃⁰` is known.
pub struct Federation<'a> {
    scenario: &'a Scenario,
    run: RunId,
    include_riders: bool,
    weights: SampleWeights,
    schedules: Vec<Option<NoiseSchedule>>,
    calibrated: bool,
}

impl<'a> Federation<'a> {
    /// Federation with every client of the scenario.
    pub fn attacked(scenario: &'a Scenario) -> Result<Self> {
        Self::build(scenario, RunId::Attacked, true)
    }

    /// Federation restricted to the fair clients, weighted over `N − M_K`.
    pub fn fair_only(scenario: &'a Scenario) -> Result<Self> {
        Self::build(scenario, RunId::Fair, false)
    }

    fn build(scenario: &'a Scenario, run: RunId, include_riders: bool) -> Result<Self> {
        scenario.validate()?;
        let weights = if include_riders {
            scenario.weights()?
        } else {
            scenario.fair_weights()?
        };
        let schedules = scenario
            .riders
            .iter()
            .map(|r| match r.strategy {
                Strategy::Plain => None,
                Strategy::Disguised { schedule } => Some(schedule),
            })
            .collect();
        Ok(Self {
            scenario,
            run,
            include_riders,
            weights,
            schedules,
            calibrated: false,
        })
    }

    pub fn weights(&self) -> &SampleWeights {
        &self.weights
    }

    fn key(&self, round: usize, client: usize, purpose: Purpose) -> StreamKey {
        StreamKey::new(self.scenario.seed, self.run, round as u64, client as u64, purpose)
    }

    fn fair_upload(&self, j: usize, theta: &ParameterVector, round: usize) -> Result<ClientUpload> {
        let t = round as u64 + 1;
        let (params, noise, noise_level, loss) = match &self.scenario.fair[j] {
            FairClient::Ou(spec) => {
                let z = self.key(round, j, Purpose::Noise).normals(theta.dim());
                let p = ou_local_update(theta, spec, t, &z)?;
                (p, z, spec.rho_at(t), None)
            }
            FairClient::Sgd(spec) => {
                let mut rng = self.key(round, j, Purpose::Minibatch).rng();
                let fit = sgd_local_update(theta, spec, self.scenario.scheme.prox(), &mut rng)?;
                (fit.params, Vec::new(), 0.0, Some(fit.loss))
            }
        };
        Ok(ClientUpload {
            client: j,
            role: Role::Fair,
            params,
            noise,
            noise_level,
            loss,
        })
    }

    fn rider_upload(&self, k: usize, theta: &ParameterVector, round: usize) -> Result<ClientUpload> {
        let client = self.scenario.fair.len() + k;
        let plain = || ClientUpload {
            client,
            role: Role::Rider,
            params: plain_update(theta),
            noise: Vec::new(),
            noise_level: 0.0,
            loss: None,
        };
        match &self.schedules[k] {
            None => Ok(plain()),
            Some(s) if s.needs_calibration() => Ok(plain()),
            Some(s) => {
                let phi = phi_at(s, round as u64 + 1)?;
                let e = self.key(round, client, Purpose::Noise).normals(theta.dim());
                Ok(ClientUpload {
                    client,
                    role: Role::Rider,
                    params: perturb(theta, phi, &e)?,
                    noise: e,
                    noise_level: phi,
                    loss: None,
                })
            }
        }
    }

    /// Executes round `t`: broadcast `theta`, collect uploads, aggregate.
    pub fn run_round(&mut self, theta: &ParameterVector, round: usize) -> Result<RoundTrace> {
        theta.check_dim(self.scenario.dim())?;
        let tag = |client: usize| {
            move |e: Error| Error::Client {
                client,
                round,
                source: Box::new(e),
            }
        };
        let fair_count = self.scenario.fair.len();
        let mut uploads: Vec<ClientUpload> = if self.scenario.has_sgd_clients() {
            (0..fair_count)
                .into_par_iter()
                .map(|j| self.fair_upload(j, theta, round).map_err(tag(j)))
                .collect::<Result<_>>()?
        } else {
            (0..fair_count)
                .map(|j| self.fair_upload(j, theta, round).map_err(tag(j)))
                .collect::<Result<_>>()?
        };
        if self.include_riders {
            for k in 0..self.scenario.riders.len() {
                uploads.push(self.rider_upload(k, theta, round).map_err(tag(fair_count + k))?);
            }
        }
        let params: Vec<ParameterVector> = uploads.iter().map(|u| u.params.clone()).collect();
        let aggregate = weighted_average(&params, &self.weights)?;

        if !self.calibrated {
            self.calibrated = true;
            if self.schedules.iter().flatten().any(NoiseSchedule::needs_calibration) {
                let sigma = estimate_sigma(&aggregate.sub(theta)?);
                for s in self.schedules.iter_mut().flatten() {
                    *s = s.calibrate(sigma);
                }
            }
        }

        Ok(RoundTrace {
            round,
            broadcast: theta.clone(),
            uploads,
            weights: self.weights.counts().to_vec(),
            aggregate,
        })
    }

    /// Runs `rounds` rounds from `theta0`.
    pub fn run(&mut self, theta0: &ParameterVector, rounds: usize) -> Result<Vec<RoundTrace>> {
        let mut theta = theta0.clone();
        let mut trace = Vec::with_capacity(rounds);
        for t in 0..rounds {
            let r = self.run_round(&theta, t)?;
            theta = r.aggregate.clone();
            trace.push(r);
        }
        Ok(trace)
    }
}

/// Runs the full scenario (fair clients and free-riders) for `scenario.rounds`.
pub fn run_training(scenario: &Scenario) -> Result<Vec<RoundTrace>> {
    Federation::attacked(scenario)?.run(&scenario.theta0, scenario.rounds)
}

/// Global model after `t` rounds of a recorded run.
pub fn global_at<'a>(run: &'a [RoundTrace], theta0: &'a ParameterVector, t: usize) -> Result<&'a ParameterVector> {
    match t {
        0 => Ok(theta0),
        t if t <= run.len() => Ok(&run[t - 1].aggregate),
        _ => Err(Error::structural(format!(
            "round {t} is beyond the {} recorded rounds",
            run.len()
        ))),
    }
}

/// Per-round ingredients of the recurrence for `θ̃^t − θ^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceTerms {
    /// `f(θ^i) = (M_K/N)[θ^i − Σ_j M_j/(N−M_K)·(η_j(θ^i − θ_j*) + θ_j*)]`.
    pub drift: Vec<f64>,
    /// `ν_i = Σ_j M_j/(N−M_K)·ρ_j ζ_{j,i}` (fair-only run).
    pub nu: Vec<f64>,
    /// `ν̃_i = Σ_j M_j/N·ρ_j ζ̃_{j,i}` (attacked run).
    pub nu_tilde: Vec<f64>,
    /// `Σ_k M_k/N·φ_k(i) ε_{k,i}` (disguised riders).
    pub disguise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrace {
    pub theta0: ParameterVector,
    pub fair_run: Vec<RoundTrace>,
    pub attacked_run: Vec<RoundTrace>,
    /// Geometric ratio `ε + M_K/N`.
    pub ratio: f64,
    pub terms: Vec<RecurrenceTerms>,
}

impl CoupledTrace {
    pub fn rounds(&self) -> usize {
        self.attacked_run.len()
    }

    /// `θ̃^t − θ^t` by direct subtraction of the two simulated models.
    pub fn direct_difference(&self, t: usize) -> Result<Vec<f64>> {
        let a = global_at(&self.attacked_run, &self.theta0, t)?;
        let f = global_at(&self.fair_run, &self.theta0, t)?;
        Ok(a.sub(f)?.into_inner())
    }
}

fn ou_clients(scenario: &Scenario) -> Result<Vec<&OuClientSpec>> {
    if scenario.fair.is_empty() {
        return Err(Error::Unsupported("coupled runs need at least one fair client".into()));
    }
    scenario
        .fair
        .iter()
        .map(|c| match c {
            FairClient::Ou(s) => Ok(s),
            FairClient::Sgd(_) => Err(Error::Unsupported(
                "coupled runs require OU fair clients; SGD clients have no closed-form recurrence".into(),
            )),
        })
        .collect()
}

/// Runs the fair-only and attacked federations from the same `θ⁰` with
/// independent noise streams, recording the recurrence terms.
pub fn run_coupled(scenario: &Scenario) -> Result<CoupledTrace> {
    let ou = ou_clients(scenario)?;
    let fair_run = Federation::fair_only(scenario)?.run(&scenario.theta0, scenario.rounds)?;
    let attacked_run = Federation::attacked(scenario)?.run(&scenario.theta0, scenario.rounds)?;

    let all = scenario.weights()?;
    let fair_w = scenario.fair_weights()?;
    let n = all.total() as f64;
    let rider_share = scenario.rider_samples() as f64 / n;
    let epsilon: f64 = ou.iter().enumerate().map(|(j, s)| all.ratio(j) * s.eta).sum();
    let ratio = epsilon + rider_share;
    let fair_count = ou.len();
    let dim = scenario.dim();

    let terms = fair_run
        .iter()
        .zip(&attacked_run)
        .map(|(fr, ar)| {
            let mut drift = vec![0.0; dim];
            let mut nu = vec![0.0; dim];
            let mut nu_tilde = vec![0.0; dim];
            let mut disguise = vec![0.0; dim];
            for (j, spec) in ou.iter().enumerate() {
                let expected = spec.expected_update(&fr.broadcast)?;
                let wf = fair_w.ratio(j);
                let wa = all.ratio(j);
                let up_f = &fr.uploads[j];
                let up_a = &ar.uploads[j];
                for d in 0..dim {
                    drift[d] += wf * expected[d];
                    nu[d] += wf * up_f.noise_level * up_f.noise[d];
                    nu_tilde[d] += wa * up_a.noise_level * up_a.noise[d];
                }
            }
            for (d, b) in drift.iter_mut().zip(fr.broadcast.iter()) {
                *d = rider_share * (b - *d);
            }
            for up in &ar.uploads[fair_count..] {
                if up.noise.is_empty() {
                    continue;
                }
                let w = all.ratio(up.client);
                for (d, e) in disguise.iter_mut().zip(&up.noise) {
                    *d += w * up.noise_level * e;
                }
            }
            Ok(RecurrenceTerms {
                drift,
                nu,
                nu_tilde,
                disguise,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(CoupledTrace {
        theta0: scenario.theta0.clone(),
        fair_run,
        attacked_run,
        ratio,
        terms,
    })
}

/// Evaluates `Σ_{i<t} (ε + M_K/N)^{t−i−1} [f(θ^i) + ν̃_i − ν_i + Σ_k (M_k/N)φ_k ε_{k,i}]`
/// per coordinate from the recorded terms.
pub fn recurrence_difference(coupled: &CoupledTrace, t: usize) -> Result<Vec<f64>> {
    if t > coupled.terms.len() {
        return Err(Error::structural(format!(
            "round {t} is beyond the {} recorded rounds",
            coupled.terms.len()
        )));
    }
    let mut acc = vec![0.0; coupled.theta0.dim()];
    for term in &coupled.terms[..t] {
        for (d, a) in acc.iter_mut().enumerate() {
            *a = coupled.ratio * *a + term.drift[d] + term.nu_tilde[d] - term.nu[d] + term.disguise[d];
        }
    }
    Ok(acc)
}
