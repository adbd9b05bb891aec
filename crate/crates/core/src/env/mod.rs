//! Performative distribution maps D_i(θ), contamination and oracles.

mod classification;
mod contribution;
mod pricing;
mod quad;
mod regression;

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

pub use classification::{StaticClassification, StrategicClassification};
pub use contribution::{AppendixLinearContribution, ContributionPricing, ContributionRegression};
pub use pricing::GaussianDemandPricing;
pub use regression::HousePricingRegression;

use crate::error::{check_len, Result};
use crate::linalg::DenseMatrix;
use crate::model::ModelVector;
use crate::rng::{stream, SimRng, StreamLabel};

/// One data point. For labelled environments the label is the last entry of `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: Vec<f64>,
    pub group: Option<usize>,
    contaminant: bool,
}

impl Sample {
    pub fn new(z: Vec<f64>) -> Self {
        Sample {
            z,
            group: None,
            contaminant: false,
        }
    }

    pub fn with_group(z: Vec<f64>, group: usize) -> Self {
        Sample {
            z,
            group: Some(group),
            contaminant: false,
        }
    }

    /// Ground truth about the sample's origin. Only evaluation and
    /// diagnostics may look at this; estimators never do.
    pub fn oracle_is_contaminant(&self) -> bool {
        self.contaminant
    }

    /// Marks the sample as drawn from the contaminant (test helper for
    /// planting outliers).
    pub fn into_contaminant(mut self) -> Self {
        self.contaminant = true;
        self
    }
}

/// How the model moves the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// Fixed mixture weights, θ-dependent parameters (f = means).
    Distribution,
    /// Fixed group distributions, θ-dependent group fractions (f = fractions).
    Contribution,
}

/// Parameters from which θ^PO and θ^PS follow in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    /// ℓ = −θᵀz with z ~ N(μ₀ − γθ, σ²I), per coordinate.
    Pricing { mu0: f64, gamma: f64, ridge: f64 },
    /// Scalar house pricing with m = E[X²].
    HousePricing { m: f64, a: f64, gamma: f64, ridge: f64 },
    /// Two fixed groups with means a₁, a₂ and fraction c₀ + c₁θ for group one.
    LinearContribution {
        a1: f64,
        a2: f64,
        intercept: f64,
        slope: f64,
        ridge: f64,
    },
}

/// A performative distribution map together with its loss.
pub trait Environment: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    /// Model dimension d.
    fn dim(&self) -> usize;

    /// Dimension of the distribution parameter f(θ).
    fn f_dim(&self) -> usize;

    fn dynamics(&self) -> Dynamics;

    /// Number of leading entries of `z` that a contaminant replaces.
    fn feature_len(&self) -> usize;

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample;

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut SimRng) -> Vec<Sample> {
        (0..n).map(|_| self.sample(theta, rng)).collect()
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64;

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]);

    fn f(&self, theta: &[f64]) -> Vec<f64>;

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>>;

    /// ∂ log p(z; f)/∂f at `f_hat`; `None` when the density vanishes.
    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>>;

    /// df/dθ, an `f_dim × dim` matrix.
    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<DenseMatrix> {
        None
    }

    /// E_{Z∼D(deployed)}[ℓ(Z; θ)], when it can be evaluated without sampling.
    fn expected_loss(&self, _theta: &[f64], _deployed: &[f64]) -> Option<f64> {
        None
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        None
    }

    /// Classification accuracy of θ on the distribution θ induces.
    fn accuracy(&self, _theta: &[f64], _n_eval: usize, _rng: &mut SimRng) -> Option<f64> {
        None
    }

    /// Mean per-coordinate variance of the features in a batch.
    fn data_variance(&self, samples: &[Sample]) -> f64 {
        feature_variance(samples, self.feature_len())
    }
}

pub(crate) fn feature_variance(samples: &[Sample], k: usize) -> f64 {
    if samples.len() < 2 || k == 0 {
        return 0.0;
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    for j in 0..k {
        let mean = samples.iter().map(|s| s.z[j]).sum::<f64>() / n;
        total += samples.iter().map(|s| (s.z[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    total / k as f64
}

pub(crate) fn normal(rng: &mut SimRng) -> f64 {
    rng.sample(StandardNormal)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn ridge_term(ridge: f64, theta: &[f64]) -> f64 {
    0.5 * ridge * dot(theta, theta)
}

/// Best response of a strategic agent: `x − γθ`.
pub fn strategic_response(x: &[f64], gamma: f64, theta: &[f64]) -> Result<Vec<f64>> {
    check_len(x.len(), theta.len(), "strategic response")?;
    Ok(x.iter().zip(theta).map(|(xi, t)| xi - gamma * t).collect())
}

/// Empirical f̂ of a batch.
pub fn estimate_f_hat(env: &dyn Environment, samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(crate::Error::config("cannot estimate f from an empty batch"));
    }
    env.estimate_f(samples)
}

/// Score of a sample; checks the dimension of `f_hat`.
pub fn score(env: &dyn Environment, z: &Sample, f_hat: &[f64]) -> Result<Option<Vec<f64>>> {
    check_len(env.f_dim(), f_hat.len(), "score f_hat")?;
    Ok(env.score(z, f_hat))
}

/// A fixed contaminating distribution Q.
pub trait Contaminant: Send + Sync + Debug {
    fn draw(&self, len: usize, rng: &mut SimRng) -> Vec<f64>;
}

/// Q = N(μ_o, σ_o² I).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianContaminant {
    pub mean: f64,
    pub sigma: f64,
}

impl Contaminant for GaussianContaminant {
    fn draw(&self, len: usize, rng: &mut SimRng) -> Vec<f64> {
        (0..len).map(|_| self.mean + self.sigma * normal(rng)).collect()
    }
}

/// A client's data source P_i(θ) = (1 − ε_i) D_i(θ) + ε_i Q_i.
#[derive(Debug, Clone)]
pub struct ContaminatedClient {
    pub env: Arc<dyn Environment>,
    pub contaminant: Option<Arc<dyn Contaminant>>,
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub n: usize,
}

impl ContaminatedClient {
    pub fn clean(env: Arc<dyn Environment>, alpha: f64, n: usize) -> Self {
        ContaminatedClient {
            env,
            contaminant: None,
            epsilon: 0.0,
            alpha,
            gamma: 0.0,
            n,
        }
    }
}

/// The three streams one batch draw consumes.
#[derive(Debug, Clone)]
pub struct BatchStreams {
    pub clean: SimRng,
    pub flags: SimRng,
    pub contaminant: SimRng,
}

impl BatchStreams {
    pub fn open(seed: u64, client: u64, tick: u64) -> Self {
        BatchStreams {
            clean: stream(seed, client, StreamLabel::Sample, tick),
            flags: stream(seed, client, StreamLabel::ContaminationFlag, tick),
            contaminant: stream(seed, client, StreamLabel::Contaminant, tick),
        }
    }
}

/// Draws `n` samples from P_i(θ).
///
/// A clean sample is drawn for every index, so the clean part of a batch does
/// not depend on ε. A contaminated index keeps the label/group of its clean
/// draw and replaces the feature entries with a draw from Q.
pub fn draw_batch(
    client: &ContaminatedClient,
    theta: &[f64],
    n: usize,
    streams: &mut BatchStreams,
) -> Vec<Sample> {
    let mut batch = client.env.sample_batch(theta, n, &mut streams.clean);
    let Some(q) = client.contaminant.as_ref() else {
        return batch;
    };
    if client.epsilon <= 0.0 {
        return batch;
    }
    let k = client.env.feature_len();
    for s in &mut batch {
        let u: f64 = streams.flags.random();
        if u < client.epsilon {
            let x = q.draw(k, &mut streams.contaminant);
            s.z[..k].copy_from_slice(&x);
            s.contaminant = true;
        }
    }
    batch
}

/// Σ α_i E_{D_i(θ)}[ℓ(Z; θ)] on the clean distributions. Uses the exact
/// expectation when `exact` is set and the environment provides one, and a
/// Monte-Carlo average over `n_eval` draws otherwise.
pub fn performative_loss(
    clients: &[ContaminatedClient],
    theta: &[f64],
    n_eval: usize,
    exact: bool,
    seed: u64,
    tick: u64,
) -> f64 {
    clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let value = if exact {
                c.env.expected_loss(theta, theta)
            } else {
                None
            };
            let value = value.unwrap_or_else(|| {
                let mut rng = stream(seed, i as u64, StreamLabel::Evaluation, tick);
                let n = n_eval.max(1);
                let batch = c.env.sample_batch(theta, n, &mut rng);
                batch.iter().map(|s| c.env.loss(s, theta)).sum::<f64>() / batch.len() as f64
            });
            c.alpha * value
        })
        .sum()
}

/// θ^PO and θ^PS.
#[derive(Debug, Clone, PartialEq)]
pub struct Optima {
    pub theta_po: ModelVector,
    pub theta_ps: ModelVector,
}

/// Closed-form optima of the α-weighted federation, when every client's
/// environment admits one of the same kind.
pub fn closed_form_optima(clients: &[ContaminatedClient]) -> Option<Optima> {
    let forms: Vec<(f64, ClosedForm)> = clients
        .iter()
        .map(|c| c.env.closed_form().map(|f| (c.alpha, f)))
        .collect::<Option<_>>()?;
    let d = clients.first()?.env.dim();
    let total: f64 = forms.iter().map(|(a, _)| a).sum();
    if total <= 0.0 {
        return None;
    }
    let mut po = (0.0, 0.0);
    let mut ps = (0.0, 0.0);
    let mut ridge = None;
    let mut kind = None;
    for (alpha, form) in &forms {
        let w = alpha / total;
        let (num, den_po, den_ps, r, k) = match *form {
            ClosedForm::Pricing { mu0, gamma, ridge } => (mu0, 2.0 * gamma, gamma, ridge, 0),
            ClosedForm::HousePricing {
                m,
                a,
                gamma,
                ridge: r,
            } => {
                if d != 1 {
                    return None;
                }
                // PO: Σw(1+γ)ma / (Σw(1+γ)²m + λ); PS: Σw m a / (Σw(1+γ)m + λ)
                let po_num = (1.0 + gamma) * m * a;
                po.0 += w * po_num;
                po.1 += w * (1.0 + gamma).powi(2) * m;
                ps.0 += w * m * a;
                ps.1 += w * (1.0 + gamma) * m;
                check_same(&mut ridge, r)?;
                check_same(&mut kind, 1.0)?;
                continue;
            }
            ClosedForm::LinearContribution {
                a1,
                a2,
                intercept,
                slope,
                ridge,
            } => {
                let delta = a1 - a2;
                (a2 + intercept * delta, -2.0 * slope * delta, -slope * delta, ridge, 2)
            }
        };
        check_same(&mut ridge, r)?;
        check_same(&mut kind, k as f64)?;
        po.0 += w * num;
        po.1 += w * den_po;
        ps.0 += w * num;
        ps.1 += w * den_ps;
    }
    let lambda = ridge?;
    let po_den = po.1 + lambda;
    let ps_den = ps.1 + lambda;
    if po_den.abs() < 1e-300 || ps_den.abs() < 1e-300 {
        return None;
    }
    Some(Optima {
        theta_po: ModelVector::from(vec![po.0 / po_den; d]),
        theta_ps: ModelVector::from(vec![ps.0 / ps_den; d]),
    })
}

fn check_same(slot: &mut Option<f64>, value: f64) -> Option<()> {
    match slot {
        None => {
            *slot = Some(value);
            Some(())
        }
        Some(v) if *v == value => Some(()),
        Some(_) => None,
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Central-difference check of an analytic Jacobian.
    pub fn jacobian_fd_error(env: &dyn Environment, theta: &[f64]) -> f64 {
        let h = 1e-5;
        let jac = env.analytic_jacobian(theta).expect("analytic jacobian");
        let mut worst: f64 = 0.0;
        for j in 0..env.dim() {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let (fp, fm) = (env.f(&plus), env.f(&minus));
            for i in 0..env.f_dim() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                worst = worst.max((fd - jac[(i, j)]).abs());
            }
        }
        worst
    }

    /// Monte-Carlo check of `expected_loss` against sampled losses; returns
    /// (exact, mc mean, standard error).
    pub fn expected_loss_mc(env: &dyn Environment, theta: &[f64], n: usize) -> (f64, f64, f64) {
        let exact = env.expected_loss(theta, theta).expect("expected loss");
        let mut rng = stream(99, 0, StreamLabel::Evaluation, 0);
        let losses: Vec<f64> = env
            .sample_batch(theta, n, &mut rng)
            .iter()
            .map(|s| env.loss(s, theta))
            .collect();
        let mean = losses.iter().sum::<f64>() / n as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        (exact, mean, (var / n as f64).sqrt())
    }

    /// Gradient check of `grad` against `loss` by central differences.
    pub fn grad_fd_error(env: &dyn Environment, z: &Sample, theta: &[f64]) -> f64 {
        let h = 1e-6;
        let mut g = vec![0.0; env.dim()];
        env.grad(z, theta, &mut g);
        let mut worst: f64 = 0.0;
        for j in 0..env.dim() {
            let mut plus = theta.to_vec();
            let mut minus = theta.to_vec();
            plus[j] += h;
            minus[j] -= h;
            let fd = (env.loss(z, &plus) - env.loss(z, &minus)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / (1.0 + g[j].abs()));
        }
        worst
    }
}
