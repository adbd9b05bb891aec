use super::{dot, normal, ridge_term, ClosedForm, Dynamics, Environment, Sample};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SimRng;

/// Demand Z ~ N(μ₀ − γθ, σ²I) for d goods priced at θ; loss is negative
/// revenue −θᵀZ (plus ridge).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDemandPricing {
    mu0: Vec<f64>,
    gamma: f64,
    sigma: f64,
    ridge: f64,
}

impl GaussianDemandPricing {
    pub fn new(mu0: Vec<f64>, gamma: f64, sigma: f64, ridge: f64) -> Result<Self> {
        if mu0.is_empty() {
            return Err(Error::config("pricing needs at least one good"));
        }
        if !(sigma > 0.0) || !gamma.is_finite() || !(ridge >= 0.0) {
            return Err(Error::config("pricing needs sigma > 0, finite gamma, ridge >= 0"));
        }
        Ok(GaussianDemandPricing {
            mu0,
            gamma,
            sigma,
            ridge,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Environment for GaussianDemandPricing {
    fn name(&self) -> &'static str {
        "gaussian-demand-pricing"
    }

    fn dim(&self) -> usize {
        self.mu0.len()
    }

    fn f_dim(&self) -> usize {
        self.mu0.len()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Distribution
    }

    fn feature_len(&self) -> usize {
        self.mu0.len()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let z = self
            .mu0
            .iter()
            .zip(theta)
            .map(|(m, t)| m - self.gamma * t + self.sigma * normal(rng))
            .collect();
        Sample::new(z)
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        -dot(theta, &z.z) + ridge_term(self.ridge, theta)
    }

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]) {
        for ((o, zi), t) in out.iter_mut().zip(&z.z).zip(theta) {
            *o = -zi + self.ridge * t;
        }
    }

    fn f(&self, theta: &[f64]) -> Vec<f64> {
        self.mu0
            .iter()
            .zip(theta)
            .map(|(m, t)| m - self.gamma * t)
            .collect()
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, z) in mean.iter_mut().zip(&s.z) {
                *m += z;
            }
        }
        let n = samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        Some(z.z.iter().zip(f_hat).map(|(x, f)| (x - f) / s2).collect())
    }

    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<DenseMatrix> {
        Some(DenseMatrix::identity(self.dim()).scale(-self.gamma))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        Some(-dot(theta, &self.f(deployed)) + ridge_term(self.ridge, theta))
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        let first = self.mu0[0];
        if self.mu0.iter().any(|m| *m != first) {
            return None;
        }
        Some(ClosedForm::Pricing {
            mu0: first,
            gamma: self.gamma,
            ridge: self.ridge,
        })
    }
}
