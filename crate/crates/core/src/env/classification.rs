use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::quad::{normal_expectation, sigmoid, softplus};
use super::{dot, normal, ridge_term, Dynamics, Environment, Sample};
use crate::error::{check_len, Error, Result};
use crate::harness::Dataset;
use crate::linalg::DenseMatrix;
use crate::rng::SimRng;

fn logistic_loss(x: &[f64], y: f64, theta: &[f64], ridge: f64) -> f64 {
    let s = dot(theta, x);
    let base = if y > 0.5 { softplus(-s) } else { softplus(s) };
    base + ridge_term(ridge, theta)
}

fn logistic_grad(x: &[f64], y: f64, theta: &[f64], ridge: f64, out: &mut [f64]) {
    let p = sigmoid(dot(theta, x));
    for ((o, xi), t) in out.iter_mut().zip(x).zip(theta) {
        *o = (p - y) * xi + ridge * t;
    }
}

fn predicts_positive(x: &[f64], theta: &[f64]) -> bool {
    dot(theta, x) >= 0.0
}

/// Per-class feature means; a class missing from the batch falls back to
/// the overall mean.
fn class_means(samples: &[Sample], d: usize) -> Vec<f64> {
    let mut sums = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    let mut all = vec![0.0; d];
    for s in samples {
        let class = usize::from(s.z[d] > 0.5);
        counts[class] += 1;
        for j in 0..d {
            sums[class][j] += s.z[j];
            all[j] += s.z[j];
        }
    }
    let n = samples.len().max(1) as f64;
    let mut out = Vec::with_capacity(2 * d);
    for class in [1usize, 0] {
        for j in 0..d {
            out.push(if counts[class] > 0 {
                sums[class][j] / counts[class] as f64
            } else {
                all[j] / n
            });
        }
    }
    out
}

/// Gaussian location score on the block of the sample's class; f = [μ₁; μ₀].
fn class_block_score(z: &Sample, f_hat: &[f64], d: usize, var: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * d];
    let offset = if z.z[d] > 0.5 { 0 } else { d };
    for j in 0..d {
        out[offset + j] = (z.z[j] - f_hat[offset + j]) / var;
    }
    out
}

fn class_jacobian(d: usize, gamma1: f64, gamma0: f64) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(2 * d, d);
    for j in 0..d {
        m[(j, j)] = -gamma1;
        m[(d + j, j)] = -gamma0;
    }
    m
}

/// Binary strategic classification on Gaussian classes: for label y,
/// X ~ N(m_y − γ_y θ, σ²I). Logistic loss with ridge; `z = [x..., y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategicClassification {
    class1_mean: Vec<f64>,
    class0_mean: Vec<f64>,
    sigma: f64,
    gamma1: f64,
    gamma0: f64,
    positive_rate: f64,
    ridge: f64,
}

impl StrategicClassification {
    pub fn new(
        class1_mean: Vec<f64>,
        class0_mean: Vec<f64>,
        sigma: f64,
        gamma1: f64,
        gamma0: f64,
        ridge: f64,
    ) -> Result<Self> {
        check_len(class1_mean.len(), class0_mean.len(), "class means")?;
        if class1_mean.is_empty() {
            return Err(Error::config("classification needs at least one feature"));
        }
        if !(sigma > 0.0) || !(ridge >= 0.0) {
            return Err(Error::config("classification needs sigma > 0 and ridge >= 0"));
        }
        Ok(StrategicClassification {
            class1_mean,
            class0_mean,
            sigma,
            gamma1,
            gamma0,
            positive_rate: 0.5,
            ridge,
        })
    }

    fn shifted_mean(&self, class: usize, deployed: &[f64]) -> Vec<f64> {
        let (m, g) = if class == 1 {
            (&self.class1_mean, self.gamma1)
        } else {
            (&self.class0_mean, self.gamma0)
        };
        m.iter().zip(deployed).map(|(mi, t)| mi - g * t).collect()
    }
}

impl Environment for StrategicClassification {
    fn name(&self) -> &'static str {
        "strategic-classification"
    }

    fn dim(&self) -> usize {
        self.class1_mean.len()
    }

    fn f_dim(&self) -> usize {
        2 * self.dim()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Distribution
    }

    fn feature_len(&self) -> usize {
        self.dim()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let positive = rng.random::<f64>() < self.positive_rate;
        let mean = self.shifted_mean(usize::from(positive), theta);
        let mut z: Vec<f64> = mean.iter().map(|m| m + self.sigma * normal(rng)).collect();
        z.push(if positive { 1.0 } else { 0.0 });
        Sample::new(z)
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        let d = self.dim();
        logistic_loss(&z.z[..d], z.z[d], theta, self.ridge)
    }

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]) {
        let d = self.dim();
        logistic_grad(&z.z[..d], z.z[d], theta, self.ridge, out);
    }

    fn f(&self, theta: &[f64]) -> Vec<f64> {
        let mut f = self.shifted_mean(1, theta);
        f.extend(self.shifted_mean(0, theta));
        f
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        Ok(class_means(samples, self.dim()))
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        Some(class_block_score(z, f_hat, self.dim(), self.sigma * self.sigma))
    }

    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<DenseMatrix> {
        Some(class_jacobian(self.dim(), self.gamma1, self.gamma0))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        // The loss depends on x only through s = θᵀx, which is Gaussian.
        let sd = self.sigma * dot(theta, theta).sqrt();
        let m1 = dot(theta, &self.shifted_mean(1, deployed));
        let m0 = dot(theta, &self.shifted_mean(0, deployed));
        let pos = normal_expectation(m1, sd, |s| softplus(-s));
        let neg = normal_expectation(m0, sd, softplus);
        Some(
            self.positive_rate * pos
                + (1.0 - self.positive_rate) * neg
                + ridge_term(self.ridge, theta),
        )
    }

    fn accuracy(&self, theta: &[f64], n_eval: usize, rng: &mut SimRng) -> Option<f64> {
        let d = self.dim();
        let n = n_eval.max(1);
        let correct = (0..n)
            .filter(|_| {
                let s = self.sample(theta, rng);
                predicts_positive(&s.z[..d], theta) == (s.z[d] > 0.5)
            })
            .count();
        Some(correct as f64 / n as f64)
    }
}

/// Strategic classification on a fixed dataset shard: each row responds to
/// the deployed model with `x − γ_y θ`.
#[derive(Debug, Clone)]
pub struct StaticClassification {
    data: Arc<Dataset>,
    rows: Vec<usize>,
    gamma1: f64,
    gamma0: f64,
    score_variance: f64,
    ridge: f64,
    base_means: Vec<f64>,
}

impl StaticClassification {
    pub fn new(
        data: Arc<Dataset>,
        rows: Vec<usize>,
        gamma1: f64,
        gamma0: f64,
        score_variance: f64,
        ridge: f64,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::config("dataset shard is empty"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= data.len()) {
            return Err(Error::config(format!("shard row {bad} is out of range")));
        }
        if !(score_variance > 0.0) || !(ridge >= 0.0) {
            return Err(Error::config("static classification needs score variance > 0"));
        }
        let d = data.num_features();
        let unshifted: Vec<Sample> = rows.iter().map(|&r| data.sample(r)).collect();
        let base_means = class_means(&unshifted, d);
        Ok(StaticClassification {
            data,
            rows,
            gamma1,
            gamma0,
            score_variance,
            ridge,
            base_means,
        })
    }

    pub fn shard_len(&self) -> usize {
        self.rows.len()
    }

    fn shifted(&self, row: usize, theta: &[f64]) -> Sample {
        let mut s = self.data.sample(row);
        let d = self.dim();
        let g = if s.z[d] > 0.5 { self.gamma1 } else { self.gamma0 };
        for j in 0..d {
            s.z[j] -= g * theta[j];
        }
        s
    }
}

impl Environment for StaticClassification {
    fn name(&self) -> &'static str {
        "static-classification"
    }

    fn dim(&self) -> usize {
        self.data.num_features()
    }

    fn f_dim(&self) -> usize {
        2 * self.dim()
    }

    fn dynamics(&self) -> Dynamics {
        Dynamics::Distribution
    }

    fn feature_len(&self) -> usize {
        self.dim()
    }

    fn sample(&self, theta: &[f64], rng: &mut SimRng) -> Sample {
        let r = self.rows[rng.random_range(0..self.rows.len())];
        self.shifted(r, theta)
    }

    /// The whole shard in row order when `n` covers it, otherwise `n` rows
    /// without replacement.
    fn sample_batch(&self, theta: &[f64], n: usize, rng: &mut SimRng) -> Vec<Sample> {
        if n >= self.rows.len() {
            return self.rows.iter().map(|&r| self.shifted(r, theta)).collect();
        }
        sample_indices(rng, self.rows.len(), n)
            .into_iter()
            .map(|k| self.shifted(self.rows[k], theta))
            .collect()
    }

    fn loss(&self, z: &Sample, theta: &[f64]) -> f64 {
        let d = self.dim();
        logistic_loss(&z.z[..d], z.z[d], theta, self.ridge)
    }

    fn grad(&self, z: &Sample, theta: &[f64], out: &mut [f64]) {
        let d = self.dim();
        logistic_grad(&z.z[..d], z.z[d], theta, self.ridge, out);
    }

    fn f(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut f = self.base_means.clone();
        for j in 0..d {
            f[j] -= self.gamma1 * theta[j];
            f[d + j] -= self.gamma0 * theta[j];
        }
        f
    }

    fn estimate_f(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        Ok(class_means(samples, self.dim()))
    }

    fn score(&self, z: &Sample, f_hat: &[f64]) -> Option<Vec<f64>> {
        Some(class_block_score(z, f_hat, self.dim(), self.score_variance))
    }

    fn analytic_jacobian(&self, _theta: &[f64]) -> Option<DenseMatrix> {
        Some(class_jacobian(self.dim(), self.gamma1, self.gamma0))
    }

    fn expected_loss(&self, theta: &[f64], deployed: &[f64]) -> Option<f64> {
        let total: f64 = self
            .rows
            .iter()
            .map(|&r| self.loss(&self.shifted(r, deployed), theta))
            .sum();
        Some(total / self.rows.len() as f64)
    }

    fn accuracy(&self, theta: &[f64], _n_eval: usize, _rng: &mut SimRng) -> Option<f64> {
        let d = self.dim();
        let correct = self
            .rows
            .iter()
            .filter(|&&r| {
                let s = self.shifted(r, theta);
                predicts_positive(&s.z[..d], theta) == (s.z[d] > 0.5)
            })
            .count();
        Some(correct as f64 / self.rows.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::*;
    use super::*;
    use crate::rng::{stream, StreamLabel};

    fn synthetic() -> StrategicClassification {
        StrategicClassification::new(vec![-1.0], vec![1.0], 0.5, 3.0, 0.02, 0.01).unwrap()
    }

    #[test]
    fn analytic_pieces_are_consistent() {
        let env = StrategicClassification::new(
            vec![-1.0, 0.5],
            vec![1.0, 0.0],
            0.5,
            3.0,
            0.02,
            0.01,
        )
        .unwrap();
        assert!(jacobian_fd_error(&env, &[-0.3, 0.2]) < 1e-4);
        let z = Sample::new(vec![0.3, -1.2, 1.0]);
        assert!(grad_fd_error(&env, &z, &[-0.3, 0.2]) < 1e-6);
        let (exact, mc, se) = expected_loss_mc(&env, &[-0.3, 0.2], 200_000);
        assert!((exact - mc).abs() < 5.0 * se, "{exact} vs {mc}");
    }

    #[test]
    fn zero_model_is_a_coin_flip() {
        let env = synthetic();
        let mut rng = stream(0, 0, StreamLabel::Accuracy, 0);
        let acc = env.accuracy(&[0.0], 100_000, &mut rng).unwrap();
        // θ = 0 predicts the positive class everywhere.
        assert!((acc - 0.5).abs() < 5.0 * 0.5 / (100_000f64).sqrt(), "{acc}");
    }

    #[test]
    fn class_means_estimate() {
        let env = synthetic();
        let batch = vec![
            Sample::new(vec![-1.0, 1.0]),
            Sample::new(vec![-3.0, 1.0]),
            Sample::new(vec![2.0, 0.0]),
        ];
        assert_eq!(env.estimate_f(&batch).unwrap(), vec![-2.0, 2.0]);
    }

    #[test]
    fn score_uses_the_label_block() {
        let env = synthetic();
        let s = env.score(&Sample::new(vec![0.0, 1.0]), &[-1.0, 1.0]).unwrap();
        assert_eq!(s, vec![4.0, 0.0]);
        let s = env.score(&Sample::new(vec![0.0, 0.0]), &[-1.0, 1.0]).unwrap();
        assert_eq!(s, vec![0.0, -4.0]);
    }

    #[test]
    fn static_shard_is_returned_in_order_when_covered() {
        let data = Arc::new(
            Dataset::new(
                vec!["x".into()],
                vec![vec![1.0], vec![2.0], vec![3.0]],
                vec![1, 0, 1],
            )
            .unwrap(),
        );
        let env = StaticClassification::new(data, vec![0, 2], 1.0, 0.0, 1.0, 0.0).unwrap();
        let mut rng = stream(0, 0, StreamLabel::Sample, 0);
        let batch = env.sample_batch(&[0.5], 10, &mut rng);
        assert_eq!(batch.len(), 2);
        assert_eq!(batch[0].z, vec![0.5, 1.0]);
        assert_eq!(batch[1].z, vec![2.5, 1.0]);
        let batch = env.sample_batch(&[0.5], 1, &mut rng);
        assert_eq!(batch.len(), 1);
    }
}
