use super::{dot, normal, ridge_term, ClosedForm, Dynamics, Environment, Sample};
use crate::error::{Error, Result};
use crate::linalg::{default_rank_tol, pseudo_inverse, DenseMatrix};
use crate::rng::SimRng;

/// Features X ~ N(μ_x, σ_x²I), price Y = (a − γθ)ᵀX + ε with ε ~ N(0, σ_n²);
/// squared loss with ridge. `z = [x..., y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HousePricingRegression {
    x_mean: Vec<f64>,
    x_sigma: f64,
    a: f64,
    gamma: f64,
    noise_sigma: f64,
    ridge: f64,
}

impl HousePricingRegression {
    pub fn new(
        x_mean: Vec<f64>,
        x_sigma: f64,
        a: f64,
        gamma: f64,
        noise_sigma: f64,
        ridge: f64,
    ) -> Result<Self> {
        if x_mean.is_empty() {
            return Err(Error::config("house pricing needs at least one feature"));
        }
        if !(x_sigma > 0.0) || !(noise_sigma > 0.0) || !(ridge >= 0.0) {
            return Err(Error::config(
                "house pricing needs x_sigma > 0, noise_sigma > 0, ridge >= 0",
            ));
        }
        Ok(HousePricingRegression {
            x_mean,
            x_sigma,
            a,
            gamma,
            noise_sigma,
            ridge,
        })
    }

    fn second_moment(&self) -> DenseMatrix {
        let d = self.x_mean.len();
        let mut m = DenseMatrix::identity(d).scale(self.x_sigma * self.x_sigma);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += self.x_mean[i] * self.x_mean[j];
            }
        }
        m
    }
}

impl Environment for HousePricingRegression {
    fn name(&self) -> &'static str {
        "house-pricing"
    }

    fn dim(&self) -> usize {
        self.x_mean.len()
    }

    fn f_dim(&self) -> usize {
        self.x_mean.len()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Distribution
    }

    fn feature_len(&self) -> usize {
        self.x_mean.len()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let d = self.dim();
        let mut z = Vec::with_capacity(d + 1);
        for m in &self.x_mean {
            z.push(m + self.x_sigma * normal(rng));
        }
        let coef = self.f(theta);
        let y = dot(&coef, &z) + self.noise_sigma * normal(rng);
        z.push(y);
        Sample::new(z)
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        let d = self.dim();
        let r = dot(theta, &z.z[..d]) - z.z[d];
        0.5 * r * r + ridge_term(self.ridge, theta)
    }

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let r = dot(theta, &z.z[..d]) - z.z[d];
        for j in 0..d {
            out[j] = r * z.z[j] + self.ridge * theta[j];
        }
    }

    fn f(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|t| self.a - self.gamma * t).collect()
    }

    /// Ordinary least squares coefficients of y on x.
    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut xtx = DenseMatrix::zeros(d, d);
        let mut xty = vec![0.0; d];
        for s in samples {
            let (x, y) = (&s.z[..d], s.z[d]);
            for i in 0..d {
                xty[i] += x[i] * y;
                for j in 0..d {
                    xtx[(i, j)] += x[i] * x[j];
                }
            }
        }
        if d == 1 {
            let denom = xtx[(0, 0)];
            return Ok(vec![if denom > 0.0 { xty[0] / denom } else { 0.0 }]);
        }
        let inv = pseudo_inverse(&xtx, default_rank_tol(d, d))?;
        inv.matvec(&xty)
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        let x = &z.z[..d];
        let r = (z.z[d] - dot(f_hat, x)) / (self.noise_sigma * self.noise_sigma);
        Some(x.iter().map(|xi| r * xi).collect())
    }

    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<DenseMatrix> {
        Some(DenseMatrix::identity(self.dim()).scale(-self.gamma))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        let coef = self.f(deployed);
        let b: Vec<f64> = theta.iter().zip(&coef).map(|(t, c)| t - c).collect();
        let mb = self.second_moment().matvec(&b).ok()?;
        let sn2 = self.noise_sigma * self.noise_sigma;
        Some(0.5 * (dot(&b, &mb) + sn2) + ridge_term(self.ridge, theta))
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        if self.dim() != 1 {
            return None;
        }
        let m = self.x_sigma * self.x_sigma + self.x_mean[0] * self.x_mean[0];
        Some(ClosedForm::HousePricing {
            m,
            a: self.a,
            gamma: self.gamma,
            ridge: self.ridge,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::rng::{stream, StreamLabel};

    #[test]
    fn analytic_pieces_are_consistent() {
        let env = HousePricingRegression::new(vec![1.0, -0.5], 1.0, 4.0, 1.5, 1.0, 0.3).unwrap();
        assert!(jacobian_fd_error(&env, &[0.4, 1.1]) < 1e-4);
        let z = Sample::new(vec![0.5, 1.5, 2.0]);
        assert!(grad_fd_error(&env, &z, &[0.4, 1.1]) < 1e-6);
        let (exact, mc, se) = expected_loss_mc(&env, &[0.4, 1.1], 200_000);
        assert!((exact - mc).abs() < 5.0 * se, "{exact} vs {mc}");
    }

    #[test]
    fn ols_recovers_coefficients() {
        let env = HousePricingRegression::new(vec![1.0, 0.0], 1.0, 4.0, 1.0, 0.5, 0.0).unwrap();
        let mut rng = stream(1, 0, StreamLabel::Sample, 0);
        let batch = env.sample_batch(&[1.0, 2.0], 50_000, &mut rng);
        let f = env.estimate_f(&batch).unwrap();
        assert!((f[0] - 3.0).abs() < 0.02 && (f[1] - 2.0).abs() < 0.02, "{f:?}");
    }

    #[test]
    fn closed_form_minimizes_expected_loss() {
        let env = HousePricingRegression::new(vec![1.0], 1.0, 4.0, 1.5, 1.0, 10.0 / 3.0).unwrap();
        let Some(ClosedForm::HousePricing { m, a, gamma, ridge }) = env.closed_form() else {
            panic!("closed form");
        };
        let po = (1.0 + gamma) * m * a / ((1.0 + gamma).powi(2) * m + ridge);
        let l = |t: f64| env.expected_loss(&[t], &[t]).unwrap();
        assert!(l(po) < l(po + 1e-3) && l(po) < l(po - 1e-3));
        let ps = m * a / (m * (1.0 + gamma) + ridge);
        let dec = |t: f64| env.expected_loss(&[t], &[ps]).unwrap();
        assert!(dec(ps) < dec(ps + 1e-3) && dec(ps) < dec(ps - 1e-3));
    }
}
