//! Fair-client local update engines.
//!
//! Two engines are provided. The Ornstein–Uhlenbeck client is the closed-form
//! model of `E·M/S` SGD steps on a locally quadratic loss: its upload is
//! `η(θ − θ*) + θ* + ρ·ζ`. The SGD client actually runs minibatch descent on a
//! dataset. Coefficient helpers map the physical constants (learning rate,
//! curvature, epochs, batch size) onto `η` and `ρ` for FedAvg and FedProx.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ParameterVector;

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::domain(format!("{name} must be positive and finite, got {v}")));
    }
    Ok(())
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::domain(format!("{name} must be nonnegative and finite, got {v}")));
    }
    Ok(())
}

/// Number of SGD steps per round, `E·M/S`.
fn step_count(epochs: u32, samples: u64, batch: u64) -> Result<f64> {
    if epochs == 0 || samples == 0 || batch == 0 {
        return Err(Error::domain("epochs, samples and batch must all be >= 1"));
    }
    let steps = epochs as f64 * samples as f64 / batch as f64;
    if steps < 1.0 {
        return Err(Error::domain(format!("E*M/S = {steps} is below one step")));
    }
    Ok(steps)
}

/// Stationary-kernel variance of an OU process with contraction `rate`
/// integrated over `steps` SGD steps.
fn ou_noise_variance(lr: f64, batch: u64, sigma: f64, rate: f64, steps: f64) -> f64 {
    lr / batch as f64 * sigma * sigma * (1.0 / (2.0 * rate)) * (1.0 - (-2.0 * lr * rate * steps).exp())
}

/// `η = exp(−λ·r·E·M/S)`.
pub fn eta_coefficient(lr: f64, curvature: f64, epochs: u32, samples: u64, batch: u64) -> Result<f64> {
    positive("learning rate", lr)?;
    positive("curvature", curvature)?;
    let steps = step_count(epochs, samples, batch)?;
    Ok((-lr * curvature * steps).exp())
}

/// Standard deviation `ρ` of the SGD noise accumulated over one round.
pub fn sgd_noise_std(lr: f64, batch: u64, sigma: f64, curvature: f64, epochs: u32, samples: u64) -> Result<f64> {
    positive("learning rate", lr)?;
    positive("curvature", curvature)?;
    nonnegative("gradient noise sigma", sigma)?;
    let steps = step_count(epochs, samples, batch)?;
    Ok(ou_noise_variance(lr, batch, sigma, curvature, steps).sqrt())
}

/// FedProx analogue of `(η, ρ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxCoefficients {
    /// `γ = exp(−λ(r+μ)E·M/S)`.
    pub gamma: f64,
    /// `η' = γ + μ(1−γ)/(r+μ)`, the contraction toward the local optimum.
    pub eta: f64,
    /// `ρ'`, the per-round noise standard deviation.
    pub rho: f64,
}

/// Coefficients of the OU client when the local objective carries the
/// proximal term `μ/2·‖θ − θ^t‖²`. With `mu = 0` this evaluates the same
/// floating-point expressions as [`eta_coefficient`] and [`sgd_noise_std`].
pub fn fedprox_coefficients(
    lr: f64,
    curvature: f64,
    mu: f64,
    sigma: f64,
    epochs: u32,
    samples: u64,
    batch: u64,
) -> Result<ProxCoefficients> {
    nonnegative("mu", mu)?;
    positive("learning rate", lr)?;
    positive("curvature", curvature)?;
    nonnegative("gradient noise sigma", sigma)?;
    let steps = step_count(epochs, samples, batch)?;
    let rate = curvature + mu;
    let gamma = (-lr * rate * steps).exp();
    let eta = gamma + mu * (1.0 - gamma) / rate;
    let rho = ou_noise_variance(lr, batch, sigma, rate, steps).sqrt();
    Ok(ProxCoefficients { gamma, eta, rho })
}

/// FedProx trade-off `μ ≥ 0`; zero means plain FedAvg local training.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProxConfig {
    pub mu: f64,
}

impl ProxConfig {
    pub fn new(mu: f64) -> Result<Self> {
        nonnegative("mu", mu)?;
        Ok(Self { mu })
    }
}

/// Transient part `scale·t^(−exponent)` of a time-varying noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decay {
    pub scale: f64,
    pub exponent: f64,
}

impl Decay {
    pub fn validate(&self) -> Result<()> {
        nonnegative("decay scale", self.scale)?;
        if !self.exponent.is_finite() {
            return Err(Error::domain("decay exponent must be finite"));
        }
        Ok(())
    }

    /// True when `scale·t^(−exponent)` converges as t → ∞.
    pub fn converges(&self) -> bool {
        self.scale == 0.0 || self.exponent > 0.0
    }

    /// Value at round index `t ≥ 1`.
    pub fn at(&self, t: u64) -> f64 {
        self.scale * (t as f64).powf(-self.exponent)
    }
}

/// Physical constants from which an OU client's `η` and `ρ` are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuPhysics {
    pub lr: f64,
    pub curvature: f64,
    pub sigma: f64,
    pub epochs: u32,
    pub batch: u64,
}

impl OuPhysics {
    /// `(η, ρ)` for a client holding `samples` points, under FedAvg when
    /// `prox.mu == 0` and FedProx otherwise.
    pub fn coefficients(&self, samples: u64, prox: ProxConfig) -> Result<(f64, f64)> {
        let c = fedprox_coefficients(
            self.lr,
            self.curvature,
            prox.mu,
            self.sigma,
            self.epochs,
            samples,
            self.batch,
        )?;
        Ok((c.eta, c.rho))
    }
}

/// Analytic fair client: `θ_j^{t+1} = η(θ^t − θ*) + θ* + ρ_j^t·ζ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuClientSpec {
    pub samples: u64,
    pub eta: f64,
    pub theta_star: ParameterVector,
    /// Constant noise level, or the limit of the schedule when `rho_decay` is set.
    pub rho: f64,
    pub rho_decay: Option<Decay>,
}

impl OuClientSpec {
    pub fn new(samples: u64, eta: f64, theta_star: ParameterVector, rho: f64) -> Result<Self> {
        let spec = Self {
            samples,
            eta,
            theta_star,
            rho,
            rho_decay: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_physics(
        samples: u64,
        physics: &OuPhysics,
        theta_star: ParameterVector,
        prox: ProxConfig,
    ) -> Result<Self> {
        let (eta, rho) = physics.coefficients(samples, prox)?;
        Self::new(samples, eta, theta_star, rho)
    }

    pub fn with_decay(mut self, decay: Decay) -> Result<Self> {
        self.rho_decay = Some(decay);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::domain("OU client must declare at least one sample"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::domain(format!("eta must lie in (0,1), got {}", self.eta)));
        }
        nonnegative("rho", self.rho)?;
        if let Some(d) = &self.rho_decay {
            d.validate()?;
            if !d.converges() {
                return Err(Error::domain("rho schedule must converge (exponent > 0)"));
            }
        }
        Ok(())
    }

    /// Noise level `ρ_j^t` for the upload of round index `t ≥ 1`.
    pub fn rho_at(&self, t: u64) -> f64 {
        self.rho + self.rho_decay.map_or(0.0, |d| d.at(t))
    }

    /// Deterministic part `η(θ − θ*) + θ*`.
    pub fn expected_update(&self, theta_global: &ParameterVector) -> Result<ParameterVector> {
        theta_global.zip_map(&self.theta_star, |g, s| self.eta * (g - s) + s)
    }
}

/// One OU round: `η(θ − θ*) + θ* + ρ_j^t·ζ` with the caller's standard normal
/// draws `noise` (one per coordinate) and round index `t ≥ 1`.
pub fn ou_local_update(
    theta_global: &ParameterVector,
    spec: &OuClientSpec,
    t: u64,
    noise: &[f64],
) -> Result<ParameterVector> {
    theta_global.check_dim(spec.theta_star.dim())?;
    if noise.len() != theta_global.dim() {
        return Err(Error::structural(format!(
            "{} noise draws for a {}-dimensional model",
            noise.len(),
            theta_global.dim()
        )));
    }
    let rho = spec.rho_at(t);
    let out = theta_global
        .iter()
        .zip(spec.theta_star.iter())
        .zip(noise)
        .map(|((&g, &s), &z)| spec.eta * (g - s) + s + rho * z)
        .collect();
    ParameterVector::new(out)
}

/// One labelled observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

/// Per-sample loss `ℓ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossModel {
    /// `ℓ_n(θ) = r/2·‖θ − x_n‖²`; the full gradient is `r(θ − θ*)` with
    /// `θ*` the mean of the `x_n`. Labels are ignored.
    Quadratic { curvature: f64 },
    /// `ℓ_n(θ) = log(1 + e^{θ·x_n}) − y_n·θ·x_n` with `y_n ∈ {0, 1}`.
    Logistic,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LossModel {
    pub fn sample_loss(&self, theta: &[f64], s: &Sample) -> f64 {
        match *self {
            LossModel::Quadratic { curvature } => {
                0.5 * curvature * theta.iter().zip(&s.x).map(|(t, x)| (t - x).powi(2)).sum::<f64>()
            }
            LossModel::Logistic => {
                let z = dot(theta, &s.x);
                softplus(z) - s.y * z
            }
        }
    }

    /// Adds `scale·∇ℓ_n(θ)` into `out`.
    fn accumulate_gradient(&self, theta: &[f64], s: &Sample, scale: f64, out: &mut [f64]) {
        match *self {
            LossModel::Quadratic { curvature } => {
                for ((o, t), x) in out.iter_mut().zip(theta).zip(&s.x) {
                    *o += scale * curvature * (t - x);
                }
            }
            LossModel::Logistic => {
                let r = sigmoid(dot(theta, &s.x)) - s.y;
                for (o, x) in out.iter_mut().zip(&s.x) {
                    *o += scale * r * x;
                }
            }
        }
    }

    /// Mean loss `L(θ) = (1/M)·Σ ℓ_n(θ)`.
    pub fn loss(&self, theta: &[f64], data: &[Sample]) -> f64 {
        data.iter().map(|s| self.sample_loss(theta, s)).sum::<f64>() / data.len() as f64
    }

    /// Full gradient, the mean of the per-sample gradients.
    pub fn gradient(&self, theta: &[f64], data: &[Sample]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let w = 1.0 / data.len() as f64;
        for s in data {
            self.accumulate_gradient(theta, s, w, &mut g);
        }
        g
    }
}

/// Fair client that runs real minibatch SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdClientSpec {
    pub data: Vec<Sample>,
    pub loss: LossModel,
    pub lr: f64,
    pub epochs: u32,
    pub batch: usize,
}

/// Result of one round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub params: ParameterVector,
    /// Local training loss `L_j` at the returned parameters (no proximal term).
    pub loss: f64,
}

impl SgdClientSpec {
    pub fn new(data: Vec<Sample>, loss: LossModel, lr: f64, epochs: u32, batch: usize) -> Result<Self> {
        let spec = Self {
            data,
            loss,
            lr,
            epochs,
            batch,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn samples(&self) -> u64 {
        self.data.len() as u64
    }

    pub fn dim(&self) -> usize {
        self.data.first().map_or(0, |s| s.x.len())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.data.len();
        if m == 0 {
            return Err(Error::domain("SGD client needs at least one sample"));
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::structural("samples must have at least one feature"));
        }
        for (n, s) in self.data.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::structural(format!(
                    "sample {n} has {} features, expected {dim}",
                    s.x.len()
                )));
            }
            if !s.x.iter().chain(std::iter::once(&s.y)).all(|v| v.is_finite()) {
                return Err(Error::domain(format!("sample {n} is not finite")));
            }
            if matches!(self.loss, LossModel::Logistic) && s.y != 0.0 && s.y != 1.0 {
                return Err(Error::domain(format!("logistic label of sample {n} must be 0 or 1")));
            }
        }
        if let LossModel::Quadratic { curvature } = self.loss {
            positive("curvature", curvature)?;
        }
        positive("learning rate", self.lr)?;
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be >= 1"));
        }
        if self.batch == 0 || !m.is_multiple_of(self.batch) {
            return Err(Error::domain(format!(
                "batch size {} must divide the sample count {m}",
                self.batch
            )));
        }
        Ok(())
    }

    /// `E·M/S`.
    pub fn steps_per_round(&self) -> usize {
        self.epochs as usize * self.data.len() / self.batch
    }

    /// Local optimum of the quadratic model; `None` for other losses.
    pub fn quadratic_optimum(&self) -> Option<Vec<f64>> {
        match self.loss {
            LossModel::Quadratic { .. } => {
                let mut mean = vec![0.0; self.dim()];
                for s in &self.data {
                    for (m, x) in mean.iter_mut().zip(&s.x) {
                        *m += x / self.data.len() as f64;
                    }
                }
                Some(mean)
            }
            LossModel::Logistic => None,
        }
    }

    pub(crate) fn descend<R: Rng + ?Sized>(
        &self,
        anchor: &[f64],
        mu: f64,
        steps: usize,
        rng: &mut R,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<Vec<f64>> {
        let m = self.data.len();
        let full_batch = self.batch == m;
        let w = 1.0 / self.batch as f64;
        let mut theta = anchor.to_vec();
        let mut grad = vec![0.0; theta.len()];
        for step in 0..steps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            if full_batch {
                for s in &self.data {
                    self.loss.accumulate_gradient(&theta, s, w, &mut grad);
                }
            } else {
                for _ in 0..self.batch {
                    let s = &self.data[rng.random_range(0..m)];
                    self.loss.accumulate_gradient(&theta, s, w, &mut grad);
                }
            }
            for ((t, g), a) in theta.iter_mut().zip(&grad).zip(anchor) {
                *t -= self.lr * (g + mu * (*t - a));
            }
            if let Some(d) = theta.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical {
                    step,
                    detail: format!("parameter {d} diverged"),
                });
            }
            observe(step, &theta);
        }
        Ok(theta)
    }
}

/// One round of local minibatch SGD starting from the broadcast model.
///
/// Runs `E·M/S` steps of `θ ← θ − λ(g_batch(θ) + μ(θ − θ_global))`. Batches
/// are drawn uniformly with replacement, except when the batch size equals
/// the dataset size, which is treated as exact full-batch descent.
pub fn sgd_local_update<R: Rng + ?Sized>(
    theta_global: &ParameterVector,
    spec: &SgdClientSpec,
    prox: ProxConfig,
    rng: &mut R,
) -> Result<LocalFit> {
    theta_global.check_dim(spec.dim())?;
    let theta = spec.descend(theta_global.as_slice(), prox.mu, spec.steps_per_round(), rng, |_, _| {})?;
    let loss = spec.loss.loss(&theta, &spec.data);
    if !loss.is_finite() {
        return Err(Error::Numerical {
            step: spec.steps_per_round(),
            detail: "training loss is not finite".into(),
        });
    }
    Ok(LocalFit {
        params: ParameterVector::new(theta)?,
        loss,
    })
}
