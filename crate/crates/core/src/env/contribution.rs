use rand::Rng;

use super::{dot, normal, ridge_term, ClosedForm, Dynamics, Environment, Sample};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SimRng;

fn draw_group(fractions: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in fractions.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    fractions.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn group_frequencies(samples: &[Sample], k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; k];
    for s in samples {
        let g = s
            .group
            .ok_or_else(|| Error::config("contribution dynamics need group-labelled samples"))?;
        if g >= k {
            return Err(Error::config(format!("group id {g} out of range (K = {k})")));
        }
        counts[g] += 1.0;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|c| c / n).collect())
}

/// Mean Bernoulli variance of the group indicators, the per-sample spread
/// behind the ν̂ estimate.
fn indicator_variance(samples: &[Sample], k: usize) -> f64 {
    if samples.is_empty() || k == 0 {
        return 0.0;
    }
    group_frequencies(samples, k)
        .map(|nu| nu.iter().map(|v| v * (1.0 - v)).sum::<f64>() / k as f64)
        .unwrap_or(0.0)
}

/// Gradient of log Σ_k ν_k p_k(z) with respect to ν, from per-group log
/// densities. `None` when the mixture density is zero.
fn mixture_score(log_p: &[f64], nu_hat: &[f64]) -> Option<Vec<f64>> {
    // Shift by the largest log density so far-tail values keep precision.
    let shift = log_p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return None;
    }
    let rel: Vec<f64> = log_p.iter().map(|lp| lp - shift).collect();
    let terms: Vec<f64> = rel
        .iter()
        .zip(nu_hat)
        .map(|(lp, nu)| if *nu > 0.0 { lp + nu.ln() } else { f64::NEG_INFINITY })
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
    Some(rel.iter().map(|lp| (lp - lse).exp()).collect())
}

/// d(u_k / Σu)/dθ given u and du/dθ (rows per group).
fn normalized_jacobian(u: &[f64], du: &[Vec<f64>], d: usize) -> DenseMatrix {
    let k = u.len();
    let total: f64 = u.iter().sum();
    let mut jac = DenseMatrix::zeros(k, d);
    if total <= 0.0 {
        return jac;
    }
    let dtotal: Vec<f64> = (0..d).map(|j| du.iter().map(|row| row[j]).sum()).collect();
    for i in 0..k {
        for j in 0..d {
            jac[(i, j)] = (du[i][j] * total - u[i] * dtotal[j]) / (total * total);
        }
    }
    jac
}

/// K fixed groups N(μ_k, σ²I); group k participates in proportion to its
/// remaining budget r_k(θ) = max(0, B − γ θᵀμ_k). Loss is negative revenue.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionPricing {
    means: Vec<Vec<f64>>,
    sigma: f64,
    budget: f64,
    gamma: f64,
    ridge: f64,
}

impl ContributionPricing {
    pub fn new(
        means: Vec<Vec<f64>>,
        sigma: f64,
        budget: f64,
        gamma: f64,
        ridge: f64,
    ) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::config("contribution pricing needs at least two groups"));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::config("group means must share a nonzero dimension"));
        }
        if !(sigma > 0.0) || !(ridge >= 0.0) || !budget.is_finite() || !gamma.is_finite() {
            return Err(Error::config(
                "contribution pricing needs sigma > 0, ridge >= 0, finite budget and gamma",
            ));
        }
        Ok(ContributionPricing {
            means,
            sigma,
            budget,
            gamma,
            ridge,
        })
    }

    fn budgets(&self, theta: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .map(|m| (self.budget - self.gamma * dot(theta, m)).max(0.0))
            .collect()
    }

    /// ν(θ); uniform when every budget is exhausted.
    pub fn fractions(&self, theta: &[f64]) -> Vec<f64> {
        let r = self.budgets(theta);
        let total: f64 = r.iter().sum();
        if total <= 0.0 {
            return vec![1.0 / r.len() as f64; r.len()];
        }
        r.into_iter().map(|x| x / total).collect()
    }
}

impl Environment for ContributionPricing {
    fn name(&self) -> &'static str {
        "contribution-pricing"
    }

    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn f_dim(&self) -> usize {
        self.means.len()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Contribution
    }

    fn feature_len(&self) -> usize {
        self.dim()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let k = draw_group(&self.fractions(theta), rng);
        let z = self.means[k]
            .iter()
            .map(|m| m + self.sigma * normal(rng))
            .collect();
        Sample::with_group(z, k)
    }

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut SimRng) -> Vec<Sample> {
        let nu = self.fractions(theta);
        (0..n)
            .map(|_| {
                let k = draw_group(&nu, rng);
                let z = self.means[k]
                    .iter()
                    .map(|m| m + self.sigma * normal(rng))
                    .collect();
                Sample::with_group(z, k)
            })
            .collect()
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
        self.fractions(theta)
    }

    fn data_variance(&self, samples: &[Sample]) -> f64 {
        indicator_variance(samples, self.means.len())
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        group_frequencies(samples, self.means.len())
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        let log_p: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                -z.z.iter()
                    .zip(m)
                    .map(|(x, mu)| (x - mu) * (x - mu))
                    .sum::<f64>()
                    / (2.0 * s2)
            })
            .collect();
        mixture_score(&log_p, f_hat)
    }

    fn analytic_jacobian(&self, theta: &[f64]) -> Option<DenseMatrix> {
        let r = self.budgets(theta);
        let d = self.dim();
        let dr: Vec<Vec<f64>> = self
            .means
            .iter()
            .zip(&r)
            .map(|(m, rk)| {
                if *rk > 0.0 {
                    m.iter().map(|mu| -self.gamma * mu).collect()
                } else {
                    vec![0.0; d]
                }
            })
            .collect();
        Some(normalized_jacobian(&r, &dr, d))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        let nu = self.fractions(deployed);
        let mean_z: f64 = nu
            .iter()
            .zip(&self.means)
            .map(|(p, m)| p * dot(theta, m))
            .sum();
        Some(-mean_z + ridge_term(self.ridge, theta))
    }
}

/// Scalar two-group pricing with group means a₁, a₂ (variance σ²) and a
/// group-one fraction linear in the price: ν₁ = clamp(c₀ + c₁θ, 0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct AppendixLinearContribution {
    a1: f64,
    a2: f64,
    sigma: f64,
    intercept: f64,
    slope: f64,
    ridge: f64,
}

impl AppendixLinearContribution {
    /// Fraction 0.5 − 0.5θ for group one.
    pub fn new(a1: f64, a2: f64, sigma: f64, ridge: f64) -> Result<Self> {
        Self::with_fraction(a1, a2, sigma, 0.5, -0.5, ridge)
    }

    pub fn with_fraction(
        a1: f64,
        a2: f64,
        sigma: f64,
        intercept: f64,
        slope: f64,
        ridge: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !(ridge >= 0.0) {
            return Err(Error::config("linear contribution needs sigma > 0 and ridge >= 0"));
        }
        if ![a1, a2, intercept, slope].iter().all(|x| x.is_finite()) {
            return Err(Error::config("linear contribution parameters must be finite"));
        }
        Ok(AppendixLinearContribution {
            a1,
            a2,
            sigma,
            intercept,
            slope,
            ridge,
        })
    }

    fn raw_fraction(&self, theta: f64) -> f64 {
        self.intercept + self.slope * theta
    }

    fn group_one(&self, theta: f64) -> f64 {
        self.raw_fraction(theta).clamp(0.0, 1.0)
    }
}

impl Environment for AppendixLinearContribution {
    fn name(&self) -> &'static str {
        "appendix-linear-contribution"
    }

    fn dim(&self) -> usize {
        1
    }

    fn f_dim(&self) -> usize {
        2
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Contribution
    }

    fn feature_len(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let p = self.group_one(theta[0]);
        let k = draw_group(&[p, 1.0 - p], rng);
        let mean = if k == 0 { self.a1 } else { self.a2 };
        Sample::with_group(vec![mean + self.sigma * normal(rng)], k)
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        -theta[0] * z.z[0] + ridge_term(self.ridge, theta)
    }

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]) {
        out[0] = -z.z[0] + self.ridge * theta[0];
    }

    fn f(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.group_one(theta[0]);
        vec![p, 1.0 - p]
    }

    fn data_variance(&self, samples: &[Sample]) -> f64 {
        indicator_variance(samples, 2)
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        group_frequencies(samples, 2)
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        let s2 = self.sigma * self.sigma;
        let x = z.z[0];
        let log_p = [
            -(x - self.a1).powi(2) / (2.0 * s2),
            -(x - self.a2).powi(2) / (2.0 * s2),
        ];
        mixture_score(&log_p, f_hat)
    }

    fn analytic_jacobian(&self, theta: &[f64]) -> Option<DenseMatrix> {
        let raw = self.raw_fraction(theta[0]);
        let s = if (0.0..=1.0).contains(&raw) {
            self.slope
        } else {
            0.0
        };
        DenseMatrix::new(2, 1, vec![s, -s]).ok()
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        let p = self.group_one(deployed[0]);
        let mean = p * self.a1 + (1.0 - p) * self.a2;
        Some(-theta[0] * mean + ridge_term(self.ridge, theta))
    }

    fn closed_form(&self) -> Option<ClosedForm> {
        Some(ClosedForm::LinearContribution {
            a1: self.a1,
            a2: self.a2,
            intercept: self.intercept,
            slope: self.slope,
            ridge: self.ridge,
        })
    }
}

/// K fixed regressions y = β_kᵀx + ε mixed with fractions that shrink with
/// a group's own expected loss:
/// ν_k ∝ Σ_{k'≠k} ℓ_{k'}(θ) + c, which for two groups is
/// (ℓ_{−k}(θ) + c) / Σ_{k'} (ℓ_{k'}(θ) + c). `z = [x..., y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionRegression {
    betas: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    x_sigma: f64,
    noise_sigma: f64,
    c: f64,
    ridge: f64,
}

impl ContributionRegression {
    pub fn new(
        betas: Vec<Vec<f64>>,
        x_mean: Vec<f64>,
        x_sigma: f64,
        noise_sigma: f64,
        c: f64,
        ridge: f64,
    ) -> Result<Self> {
        let d = x_mean.len();
        if betas.len() < 2 || d == 0 || betas.iter().any(|b| b.len() != d) {
            return Err(Error::config(
                "contribution regression needs two or more coefficient vectors of the feature dimension",
            ));
        }
        if !(x_sigma > 0.0) || !(noise_sigma > 0.0) || !(c > 0.0) || !(ridge >= 0.0) {
            return Err(Error::config(
                "contribution regression needs x_sigma, noise_sigma, c > 0 and ridge >= 0",
            ));
        }
        Ok(ContributionRegression {
            betas,
            x_mean,
            x_sigma,
            noise_sigma,
            c,
            ridge,
        })
    }

    fn second_moment_times(&self, v: &[f64]) -> Vec<f64> {
        let s2 = self.x_sigma * self.x_sigma;
        let mv = dot(&self.x_mean, v);
        v.iter()
            .zip(&self.x_mean)
            .map(|(vi, mi)| s2 * vi + mi * mv)
            .collect()
    }

    /// Expected squared loss (without ridge) of θ on group k.
    fn group_loss(&self, k: usize, theta: &[f64]) -> f64 {
        let b: Vec<f64> = theta.iter().zip(&self.betas[k]).map(|(t, bk)| t - bk).collect();
        0.5 * (dot(&b, &self.second_moment_times(&b)) + self.noise_sigma * self.noise_sigma)
    }

    fn weights(&self, theta: &[f64]) -> Vec<f64> {
        let losses: Vec<f64> = (0..self.betas.len())
            .map(|k| self.group_loss(k, theta))
            .collect();
        let total: f64 = losses.iter().sum();
        losses.iter().map(|l| total - l + self.c).collect()
    }

    pub fn fractions(&self, theta: &[f64]) -> Vec<f64> {
        let u = self.weights(theta);
        let total: f64 = u.iter().sum();
        u.into_iter().map(|x| x / total).collect()
    }
}

impl Environment for ContributionRegression {
    fn name(&self) -> &'static str {
        "contribution-regression"
    }

    fn dim(&self) -> usize {
        self.x_mean.len()
    }

    fn f_dim(&self) -> usize {
        self.betas.len()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Contribution
    }

    fn feature_len(&self) -> usize {
        self.dim()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let nu = self.fractions(theta);
        self.draw(&nu, rng)
    }

    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut SimRng) -> Vec<Sample> {
        let nu = self.fractions(theta);
        (0..n).map(|_| self.draw(&nu, rng)).collect()
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
        self.fractions(theta)
    }

    fn data_variance(&self, samples: &[Sample]) -> f64 {
        indicator_variance(samples, self.betas.len())
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        group_frequencies(samples, self.betas.len())
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim();
        let s2 = self.noise_sigma * self.noise_sigma;
        let log_p: Vec<f64> = self
            .betas
            .iter()
            .map(|b| -(z.z[d] - dot(b, &z.z[..d])).powi(2) / (2.0 * s2))
            .collect();
        mixture_score(&log_p, f_hat)
    }

    fn analytic_jacobian(&self, theta: &[f64]) -> Option<DenseMatrix> {
        let d = self.dim();
        let k = self.betas.len();
        let grads: Vec<Vec<f64>> = (0..k)
            .map(|g| {
                let b: Vec<f64> = theta.iter().zip(&self.betas[g]).map(|(t, bk)| t - bk).collect();
                self.second_moment_times(&b)
            })
            .collect();
        let total_grad: Vec<f64> = (0..d).map(|j| grads.iter().map(|g| g[j]).sum()).collect();
        let du: Vec<Vec<f64>> = grads
            .iter()
            .map(|g| total_grad.iter().zip(g).map(|(t, gi)| t - gi).collect())
            .collect();
        Some(normalized_jacobian(&self.weights(theta), &du, d))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        let nu = self.fractions(deployed);
        let l: f64 = nu
            .iter()
            .enumerate()
            .map(|(k, p)| p * self.group_loss(k, theta))
            .sum();
        Some(l + ridge_term(self.ridge, theta))
    }
}

impl ContributionRegression {
    fn draw(&self, nu: &[f64], rng: &mut SimRng) -> Sample {
        let k = draw_group(nu, rng);
        let mut z: Vec<f64> = self
            .x_mean
            .iter()
            .map(|m| m + self.x_sigma * normal(rng))
            .collect();
        let y = dot(&self.betas[k], &z) + self.noise_sigma * normal(rng);
        z.push(y);
        Sample::with_group(z, k)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::rng::{stream, StreamLabel};

    #[test]
    fn frequencies_from_labels() {
        let env = ContributionPricing::new(vec![vec![1.0], vec![-1.0]], 1.0, 5.0, 1.0, 0.0)
            .unwrap();
        let batch: Vec<Sample> = [0, 0, 1, 1, 1]
            .iter()
            .map(|&g| Sample::with_group(vec![0.0], g))
            .collect();
        let f = env.estimate_f(&batch).unwrap();
        assert!((f[0] - 0.4).abs() < 1e-15 && (f[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn unlabelled_samples_are_rejected() {
        let env = ContributionPricing::new(vec![vec![1.0], vec![-1.0]], 1.0, 5.0, 1.0, 0.0)
            .unwrap();
        assert!(env.estimate_f(&[Sample::new(vec![0.0])]).is_err());
    }

    #[test]
    fn mixture_score_at_a_group_mean() {
        let env = ContributionPricing::new(vec![vec![0.0], vec![20.0]], 1.0, 5.0, 0.0, 0.0)
            .unwrap();
        let s = env.score(&Sample::new(vec![0.0]), &[0.5, 0.5]).unwrap();
        // p₁/(0.5 p₁ + 0.5 p₂) with p₂/p₁ = e^{-200}.
        let ratio = (-200.0f64).exp();
        assert!((s[0] - 2.0 / (1.0 + ratio)).abs() < 1e-12);
        assert!(s[1] < 1e-80);
    }

    #[test]
    fn mixture_score_survives_far_tails() {
        let env = ContributionPricing::new(vec![vec![0.0], vec![1.0]], 0.01, 5.0, 0.0, 0.0)
            .unwrap();
        // Both densities underflow in linear space here.
        let s = env.score(&Sample::new(vec![500.0]), &[0.5, 0.5]).unwrap();
        assert!(s.iter().all(|x| x.is_finite()));
        assert!((s[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_mixture_density_is_excluded() {
        let env = ContributionPricing::new(vec![vec![0.0], vec![1.0]], 1.0, 5.0, 0.0, 0.0)
            .unwrap();
        assert!(env.score(&Sample::new(vec![0.0]), &[0.0, 0.0]).is_none());
    }

    #[test]
    fn fractions_sum_to_one_on_a_grid() {
        let env = ContributionPricing::new(vec![vec![10.0], vec![-5.0]], 0.5, 5.0, 0.1, 0.0)
            .unwrap();
        let lin = AppendixLinearContribution::new(0.5, -0.5, 0.5, 0.0).unwrap();
        let reg = ContributionRegression::new(
            vec![vec![1.0], vec![3.0]],
            vec![1.0],
            1.0,
            2.0,
            1.0,
            0.0,
        )
        .unwrap();
        for i in 0..=400 {
            let t = -10.0 + 0.05 * i as f64;
            for f in [env.f(&[t]), lin.f(&[t]), reg.f(&[t])] {
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(f.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn exhausted_budgets_fall_back_to_uniform() {
        let env = ContributionPricing::new(vec![vec![10.0], vec![5.0]], 0.5, 1.0, 1.0, 0.0)
            .unwrap();
        assert_eq!(env.f(&[5.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn analytic_pieces_are_consistent() {
        let env = ContributionPricing::new(
            vec![vec![10.0, 1.0], vec![-5.0, 2.0]],
            0.5,
            5.0,
            0.1,
            0.01,
        )
        .unwrap();
        assert!(jacobian_fd_error(&env, &[1.0, 0.5]) < 1e-4);
        let (exact, mc, se) = expected_loss_mc(&env, &[1.0, 0.5], 200_000);
        assert!((exact - mc).abs() < 5.0 * se);

        let lin = AppendixLinearContribution::new(1.0, -0.5, 0.5, 0.0).unwrap();
        assert!(jacobian_fd_error(&lin, &[0.3]) < 1e-4);
        let (exact, mc, se) = expected_loss_mc(&lin, &[0.3], 200_000);
        assert!((exact - mc).abs() < 5.0 * se);

        let reg = ContributionRegression::new(
            vec![vec![1.0, 0.0], vec![3.0, -1.0]],
            vec![1.0, 0.5],
            1.0,
            2.0,
            1.0,
            0.1,
        )
        .unwrap();
        assert!(jacobian_fd_error(&reg, &[1.5, -0.2]) < 1e-4);
        let z = Sample::with_group(vec![0.5, 1.0, 2.0], 0);
        assert!(grad_fd_error(&reg, &z, &[1.5, -0.2]) < 1e-6);
        let (exact, mc, se) = expected_loss_mc(&reg, &[1.5, -0.2], 400_000);
        assert!((exact - mc).abs() < 5.0 * se, "{exact} vs {mc}");
    }

    #[test]
    fn sampled_group_shares_follow_fractions() {
        let env = ContributionPricing::new(vec![vec![10.0], vec![-5.0]], 0.5, 5.0, 0.1, 0.0)
            .unwrap();
        let mut rng = stream(5, 0, StreamLabel::Sample, 0);
        let n = 100_000;
        let batch = env.sample_batch(&[2.0], n, &mut rng);
        let f_hat = env.estimate_f(&batch).unwrap();
        let f = env.f(&[2.0]);
        assert!((f_hat[0] - f[0]).abs() < 5.0 * (0.25 / n as f64).sqrt());
    }
}
