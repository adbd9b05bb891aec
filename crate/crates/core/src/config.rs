//! Experiment configuration (TOML) and construction of the client set.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{
    AppendixLinearContribution, ContaminatedClient, Contaminant, ContributionPricing,
    ContributionRegression, Environment, GaussianContaminant, GaussianDemandPricing,
    HousePricingRegression, StaticClassification, StrategicClassification,
};
use crate::error::{Error, Result};
use crate::harness::{ingest_csv, synthetic_dataset, Dataset};
use crate::model::{ModelVector, ParameterBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[serde(alias = "ProFL")]
    Profl,
    #[serde(alias = "PoFL")]
    Pofl,
    #[serde(alias = "PFL")]
    Pfl,
    #[serde(alias = "CentralizedPG", alias = "pg")]
    CentralizedPg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Profl,
        Algorithm::Pofl,
        Algorithm::Pfl,
        Algorithm::CentralizedPg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Profl => "profl",
            Algorithm::Pofl => "pofl",
            Algorithm::Pfl => "pfl",
            Algorithm::CentralizedPg => "centralized-pg",
        }
    }

    /// Whether the update uses the ∇L₂ correction.
    pub fn uses_l2(self) -> bool {
        !matches!(self, Algorithm::Pfl)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SampleSizeMode {
    Fixed {
        n: usize,
    },
    Adaptive {
        /// Error bound Φ.
        error_bound: f64,
        /// Failure probability φ.
        #[serde(default = "default_confidence")]
        confidence: f64,
        n_min: usize,
        n_max: usize,
    },
}

fn default_confidence() -> f64 {
    0.05
}

impl SampleSizeMode {
    /// Sample size used before any adaptive information exists.
    pub fn initial(&self) -> usize {
        match *self {
            SampleSizeMode::Fixed { n } => n,
            SampleSizeMode::Adaptive { n_max, .. } => n_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustFilter {
    pub c: f64,
    pub j: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

/// Server-side Jacobian estimation over clusters of clients. Either an
/// explicit `assignment` (client → cluster) or a number of contiguous
/// `groups`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerJacobian {
    #[serde(default)]
    pub assignment: Option<Vec<usize>>,
    #[serde(default)]
    pub groups: Option<usize>,
}

impl ServerJacobian {
    pub fn resolve(&self, num_clients: usize) -> Result<Vec<usize>> {
        match (&self.assignment, self.groups) {
            (Some(a), None) => {
                if a.len() != num_clients {
                    return Err(Error::Dimension {
                        expected: num_clients,
                        got: a.len(),
                        context: "server_jacobian.assignment",
                    });
                }
                Ok(a.clone())
            }
            (None, Some(g)) if g >= 1 && g <= num_clients => {
                Ok((0..num_clients).map(|i| i * g / num_clients).collect())
            }
            (None, Some(g)) => Err(Error::config(format!(
                "server_jacobian.groups = {g} must lie in 1..={num_clients}"
            ))),
            _ => Err(Error::config(
                "server_jacobian needs exactly one of `assignment` or `groups`",
            )),
        }
    }
}

/// A per-client parameter: one value for everyone, two values spread
/// evenly over the clients, or one value per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Spread {
    Scalar(f64),
    Values(Vec<f64>),
}

impl Spread {
    pub fn resolve(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            Spread::Scalar(x) => Ok(vec![*x; n]),
            Spread::Values(v) if v.len() == n => Ok(v.clone()),
            Spread::Values(v) if v.len() == 2 => {
                let (lo, hi) = (v[0], v[1]);
                if n == 1 {
                    return Ok(vec![0.5 * (lo + hi)]);
                }
                Ok((0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect())
            }
            Spread::Values(v) => Err(Error::config(format!(
                "`{what}` has {} values; expected 1, 2 (a range) or {n} (one per client)",
                v.len()
            ))),
        }
    }
}

impl Default for Spread {
    fn default() -> Self {
        Spread::Scalar(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub rows: usize,
    #[serde(default = "one")]
    pub dim: usize,
    pub class1_mean: f64,
    pub class0_mean: f64,
    pub sigma: f64,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvironmentConfig {
    GaussianDemandPricing {
        #[serde(default = "one")]
        dim: usize,
        mu0: Spread,
        gamma: Spread,
        #[serde(default = "one_f")]
        sigma: f64,
    },
    ContributionPricing {
        #[serde(default = "one")]
        dim: usize,
        group_means: Vec<f64>,
        sigma: f64,
        budget: f64,
        gamma: Spread,
    },
    StrategicClassification {
        #[serde(default = "one")]
        dim: usize,
        class1_mean: Spread,
        class0_mean: Spread,
        sigma: f64,
        gamma1: Spread,
        gamma0: Spread,
    },
    HousePricing {
        #[serde(default = "one")]
        dim: usize,
        x_mean: f64,
        x_sigma: f64,
        a: f64,
        gamma: Spread,
        noise_sigma: f64,
    },
    ContributionRegression {
        #[serde(default = "one")]
        dim: usize,
        slopes: Vec<f64>,
        x_mean: f64,
        x_sigma: f64,
        noise_sigma: f64,
        #[serde(default = "default_c")]
        c: Spread,
    },
    AppendixLinearContribution {
        a1: f64,
        a2: f64,
        #[serde(default = "half")]
        sigma: f64,
        #[serde(default = "half")]
        intercept: f64,
        #[serde(default = "minus_half")]
        slope: f64,
    },
    StaticClassification {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        synthetic: Option<SyntheticData>,
        gamma1: Spread,
        gamma0: Spread,
        #[serde(default = "one_f")]
        score_variance: f64,
    },
}

fn default_c() -> Spread {
    Spread::Scalar(1.0)
}

fn half() -> f64 {
    0.5
}

fn minus_half() -> f64 {
    -0.5
}

impl EnvironmentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvironmentConfig::GaussianDemandPricing { .. } => "gaussian-demand-pricing",
            EnvironmentConfig::ContributionPricing { .. } => "contribution-pricing",
            EnvironmentConfig::StrategicClassification { .. } => "strategic-classification",
            EnvironmentConfig::HousePricing { .. } => "house-pricing",
            EnvironmentConfig::ContributionRegression { .. } => "contribution-regression",
            EnvironmentConfig::AppendixLinearContribution { .. } => {
                "appendix-linear-contribution"
            }
            EnvironmentConfig::StaticClassification { .. } => "static-classification",
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            EnvironmentConfig::StrategicClassification { .. }
                | EnvironmentConfig::StaticClassification { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationConfig {
    #[serde(default)]
    pub epsilon: Spread,
    /// μ_o of Q = N(μ_o, σ_o²).
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "one_f")]
    pub sigma: f64,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        ContaminationConfig {
            epsilon: Spread::Scalar(0.0),
            mean: 0.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Use the exact expected loss when the environment provides one.
    #[serde(default = "yes")]
    pub exact: bool,
    /// Monte-Carlo draws per client otherwise.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Fresh draws used for accuracy reporting.
    #[serde(default = "default_accuracy_samples")]
    pub accuracy_samples: usize,
}

fn yes() -> bool {
    true
}

fn default_n_eval() -> usize {
    2000
}

fn default_accuracy_samples() -> usize {
    20_000
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            exact: true,
            n_eval: default_n_eval(),
            accuracy_samples: default_accuracy_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Learning rate η.
    pub eta: f64,
    /// Estimation window H.
    #[serde(alias = "H")]
    pub window: usize,
    /// Local steps per round R.
    #[serde(alias = "R")]
    pub rounds: usize,
    /// Total iterations T.
    #[serde(alias = "T")]
    pub iterations: usize,
    pub num_clients: usize,
    #[serde(default = "one_f")]
    pub enrollment_fraction: f64,
    /// Client weights α; uniform when absent.
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
    pub sample_size: SampleSizeMode,
    #[serde(default)]
    pub robust_filter: Option<RobustFilter>,
    #[serde(default)]
    pub server_jacobian: Option<ServerJacobian>,
    pub projection: ParameterBox,
    #[serde(default)]
    pub ridge: f64,
    pub initial_model: Vec<f64>,
    /// Relative rank tolerance for pseudo-inverses; defaults to
    /// 1e-10 · max(rows, cols).
    #[serde(default)]
    pub rank_tol: Option<f64>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub contamination: ContaminationConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::Profl
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        Ok(toml::Value::Table(table).try_into()?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn dim(&self) -> usize {
        self.initial_model.len()
    }

    /// Client weights, uniform unless configured.
    pub fn weights(&self) -> Vec<f64> {
        match &self.alpha {
            Some(a) => a.clone(),
            None => vec![1.0 / self.num_clients as f64; self.num_clients],
        }
    }

    /// Number of clients enrolled per round, ⌈fraction · N⌉.
    pub fn enrolled_count(&self) -> usize {
        ((self.enrollment_fraction * self.num_clients as f64).ceil() as usize)
            .clamp(1, self.num_clients)
    }

    /// Checks the configuration; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta must be positive"));
        }
        if self.window == 0 || self.rounds == 0 || self.iterations == 0 || self.num_clients == 0
        {
            return Err(Error::config(
                "window (H), rounds (R), iterations (T) and num_clients must be positive",
            ));
        }
        if !(self.enrollment_fraction > 0.0 && self.enrollment_fraction <= 1.0) {
            return Err(Error::config("enrollment_fraction must lie in (0, 1]"));
        }
        let alpha = self.weights();
        if alpha.len() != self.num_clients {
            return Err(Error::Dimension {
                expected: self.num_clients,
                got: alpha.len(),
                context: "alpha",
            });
        }
        if alpha.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::config("alpha entries must be nonnegative"));
        }
        let total: f64 = alpha.iter().sum();
        if self.alpha.is_some() && (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("alpha sums to {total}, not 1")));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::config("ridge must be nonnegative"));
        }
        self.projection.validate()?;
        let d = self.dim();
        if d == 0 {
            return Err(Error::config("initial_model must be nonempty"));
        }
        if self.projection.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.projection.dim(),
                context: "projection box",
            });
        }
        if !self.projection.contains(&self.initial_model) {
            warnings.push("initial_model lies outside the projection box; it will be clamped".into());
        }
        match &self.sample_size {
            SampleSizeMode::Fixed { n } if *n == 0 => {
                return Err(Error::config("sample size must be positive"));
            }
            SampleSizeMode::Adaptive {
                error_bound,
                confidence,
                n_min,
                n_max,
            } => {
                if *n_min == 0 || n_min > n_max {
                    return Err(Error::config("adaptive sizing needs 1 <= n_min <= n_max"));
                }
                if !(*confidence > 0.0 && *confidence < 1.0) {
                    return Err(Error::config("adaptive confidence must lie in (0, 1)"));
                }
                if !(*error_bound > 0.0) {
                    return Err(Error::config("adaptive error bound must be positive"));
                }
                if self.algorithm != Algorithm::Profl {
                    warnings.push(format!(
                        "adaptive sample sizing is a ProFL feature; {} uses n_max",
                        self.algorithm
                    ));
                }
            }
            _ => {}
        }
        if let Some(rf) = &self.robust_filter {
            if !(rf.c > 0.0 && rf.c < 1.0) || !(rf.j > 0.0 && rf.j < 1.0) {
                return Err(Error::config("robust_filter c and j must lie in (0, 1)"));
            }
            if rf.bins < 2 {
                return Err(Error::config("robust_filter bins must be at least 2"));
            }
        } else if self.algorithm == Algorithm::Profl {
            warnings.push("ProFL without robust_filter runs with the filter disabled".into());
        }
        if let Some(sj) = &self.server_jacobian {
            sj.resolve(self.num_clients)?;
        }
        if self.algorithm.uses_l2() && self.window <= d {
            warnings.push(format!(
                "window H = {} does not exceed the model dimension {d}; the finite-difference \
                 Jacobian may be rank-deficient",
                self.window
            ));
        }
        if self.iterations % self.rounds != 0 && self.algorithm != Algorithm::CentralizedPg {
            warnings.push(format!(
                "T = {} is not a multiple of R = {}; the last partial round is not aggregated",
                self.iterations, self.rounds
            ));
        }
        let eps = self.contamination.epsilon.resolve(self.num_clients, "contamination.epsilon")?;
        if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::config("contamination epsilon must lie in [0, 1]"));
        }
        if !(self.contamination.sigma >= 0.0) {
            return Err(Error::config("contamination sigma must be nonnegative"));
        }
        Ok(warnings)
    }

    /// Initial model projected into the box.
    pub fn initial_theta(&self) -> Result<ModelVector> {
        crate::model::project(&ModelVector::new(self.initial_model.clone())?, &self.projection)
    }

    /// Builds every client's data source.
    pub fn build_clients(&self) -> Result<Vec<ContaminatedClient>> {
        self.validate()?;
        let n = self.num_clients;
        let alpha = self.weights();
        let n0 = self.sample_size.initial();
        let envs = self.build_environments()?;
        let eps = self.contamination.epsilon.resolve(n, "contamination.epsilon")?;
        let q: Arc<dyn Contaminant> = Arc::new(GaussianContaminant {
            mean: self.contamination.mean,
            sigma: self.contamination.sigma,
        });
        let clients = envs
            .into_iter()
            .zip(alpha)
            .zip(eps)
            .map(|(((env, gamma), alpha), epsilon)| ContaminatedClient {
                env,
                contaminant: Some(q.clone()),
                epsilon,
                alpha,
                gamma,
                n: n0,
            })
            .collect::<Vec<_>>();
        for c in &clients {
            if c.env.dim() != self.dim() {
                return Err(Error::Dimension {
                    expected: self.dim(),
                    got: c.env.dim(),
                    context: "environment dimension vs initial_model",
                });
            }
        }
        Ok(clients)
    }

    fn build_environments(&self) -> Result<Vec<(Arc<dyn Environment>, f64)>> {
        let n = self.num_clients;
        let ridge = self.ridge;
        let mut out: Vec<(Arc<dyn Environment>, f64)> = Vec::with_capacity(n);
        match &self.environment {
            EnvironmentConfig::GaussianDemandPricing {
                dim,
                mu0,
                gamma,
                sigma,
            } => {
                let mu0 = mu0.resolve(n, "environment.mu0")?;
                let gamma = gamma.resolve(n, "environment.gamma")?;
                for i in 0..n {
                    let env = GaussianDemandPricing::new(vec![mu0[i]; *dim], gamma[i], *sigma, ridge)?;
                    out.push((Arc::new(env), gamma[i]));
                }
            }
            EnvironmentConfig::ContributionPricing {
                dim,
                group_means,
                sigma,
                budget,
                gamma,
            } => {
                let gamma = gamma.resolve(n, "environment.gamma")?;
                let means: Vec<Vec<f64>> = group_means.iter().map(|m| vec![*m; *dim]).collect();
                for g in gamma {
                    let env = ContributionPricing::new(means.clone(), *sigma, *budget, g, ridge)?;
                    out.push((Arc::new(env), g));
                }
            }
            EnvironmentConfig::StrategicClassification {
                dim,
                class1_mean,
                class0_mean,
                sigma,
                gamma1,
                gamma0,
            } => {
                let m1 = class1_mean.resolve(n, "environment.class1_mean")?;
                let m0 = class0_mean.resolve(n, "environment.class0_mean")?;
                let g1 = gamma1.resolve(n, "environment.gamma1")?;
                let g0 = gamma0.resolve(n, "environment.gamma0")?;
                for i in 0..n {
                    let env = StrategicClassification::new(
                        vec![m1[i]; *dim],
                        vec![m0[i]; *dim],
                        *sigma,
                        g1[i],
                        g0[i],
                        ridge,
                    )?;
                    out.push((Arc::new(env), g1[i]));
                }
            }
            EnvironmentConfig::HousePricing {
                dim,
                x_mean,
                x_sigma,
                a,
                gamma,
                noise_sigma,
            } => {
                let gamma = gamma.resolve(n, "environment.gamma")?;
                for g in gamma {
                    let env = HousePricingRegression::new(
                        vec![*x_mean; *dim],
                        *x_sigma,
                        *a,
                        g,
                        *noise_sigma,
                        ridge,
                    )?;
                    out.push((Arc::new(env), g));
                }
            }
            EnvironmentConfig::ContributionRegression {
                dim,
                slopes,
                x_mean,
                x_sigma,
                noise_sigma,
                c,
            } => {
                let c = c.resolve(n, "environment.c")?;
                let betas: Vec<Vec<f64>> = slopes.iter().map(|b| vec![*b; *dim]).collect();
                for ci in c {
                    let env = ContributionRegression::new(
                        betas.clone(),
                        vec![*x_mean; *dim],
                        *x_sigma,
                        *noise_sigma,
                        ci,
                        ridge,
                    )?;
                    out.push((Arc::new(env), 0.0));
                }
            }
            EnvironmentConfig::AppendixLinearContribution {
                a1,
                a2,
                sigma,
                intercept,
                slope,
            } => {
                for _ in 0..n {
                    let env = AppendixLinearContribution::with_fraction(
                        *a1, *a2, *sigma, *intercept, *slope, ridge,
                    )?;
                    out.push((Arc::new(env), *slope));
                }
            }
            EnvironmentConfig::StaticClassification {
                path,
                synthetic,
                gamma1,
                gamma0,
                score_variance,
            } => {
                let data: Dataset = match (path, synthetic) {
                    (Some(p), None) => ingest_csv(p)?,
                    (None, Some(s)) => synthetic_dataset(s, self.seed)?,
                    _ => {
                        return Err(Error::config(
                            "static-classification needs exactly one of `path` or `synthetic`",
                        ))
                    }
                };
                let data = Arc::new(data);
                let shards = data.shards(n)?;
                let g1 = gamma1.resolve(n, "environment.gamma1")?;
                let g0 = gamma0.resolve(n, "environment.gamma0")?;
                for (i, rows) in shards.into_iter().enumerate() {
                    let env = StaticClassification::new(
                        data.clone(),
                        rows,
                        g1[i],
                        g0[i],
                        *score_variance,
                        ridge,
                    )?;
                    out.push((Arc::new(env), g1[i]));
                }
            }
        }
        Ok(out)
    }
}

/// Sets `dotted.key = value` in a TOML table. `raw` is parsed as a TOML
/// value and falls back to a plain string.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = parse_value(raw);
    set_path(table, key, value)
}

pub(crate) fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub(crate) fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("invalid override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(Error::config(format!(
                    "override `{key}`: `{p}` is not a table"
                )))
            }
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Splits `key=value`.
pub fn split_override(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::config(format!("override `{s}` is not of the form key=value")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
        eta = 0.01
        H = 2
        R = 5
        T = 100
        num_clients = 2
        initial_model = [0.5]
        sample_size = { mode = "fixed", n = 100 }
        robust_filter = { c = 0.001, j = 0.01 }
        projection = { lower = [0.0], upper = [10.0] }
        [environment]
        kind = "gaussian-demand-pricing"
        mu0 = 6.0
        gamma = [1.0, 3.0]
    "#;

    #[test]
    fn parses_and_builds() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.window, 2);
        assert_eq!(cfg.algorithm, Algorithm::Profl);
        assert_eq!(cfg.robust_filter.unwrap().bins, 20);
        let clients = cfg.build_clients().unwrap();
        assert_eq!(clients.len(), 2);
        assert_eq!(clients[1].gamma, 3.0);
        assert_eq!(clients[0].alpha, 0.5);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn spreads() {
        assert_eq!(Spread::Scalar(2.0).resolve(3, "x").unwrap(), vec![2.0; 3]);
        assert_eq!(
            Spread::Values(vec![1.0, 3.0]).resolve(3, "x").unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(Spread::Values(vec![1.0, 3.0]).resolve(1, "x").unwrap(), vec![2.0]);
        assert!(Spread::Values(vec![1.0, 2.0, 3.0]).resolve(4, "x").is_err());
    }

    #[test]
    fn alpha_must_sum_to_one() {
        let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        cfg.alpha = Some(vec![0.5, 0.6]);
        assert!(cfg.validate().is_err());
        cfg.alpha = Some(vec![0.25, 0.75]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn warns_on_small_window_and_missing_filter() {
        let mut cfg = ExperimentConfig::from_toml_str(BASE).unwrap();
        cfg.window = 1;
        cfg.robust_filter = None;
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 2, "{w:?}");
    }

    #[test]
    fn overrides_edit_nested_keys() {
        let mut t: toml::Table = BASE.parse().unwrap();
        apply_override(&mut t, "eta", "0.5").unwrap();
        apply_override(&mut t, "environment.gamma", "[2.0, 2.0]").unwrap();
        apply_override(&mut t, "algorithm", "pfl").unwrap();
        let cfg = ExperimentConfig::from_table(t).unwrap();
        assert_eq!(cfg.eta, 0.5);
        assert_eq!(cfg.algorithm, Algorithm::Pfl);
        let EnvironmentConfig::GaussianDemandPricing { gamma, .. } = &cfg.environment else {
            panic!()
        };
        assert_eq!(gamma, &Spread::Values(vec![2.0, 2.0]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("bogus = 1\n{BASE}");
        assert!(ExperimentConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn server_clusters() {
        let sj = ServerJacobian {
            assignment: None,
            groups: Some(2),
        };
        assert_eq!(sj.resolve(4).unwrap(), vec![0, 0, 1, 1]);
        let sj = ServerJacobian {
            assignment: Some(vec![0, 1]),
            groups: Some(1),
        };
        assert!(sj.resolve(2).is_err());
    }
}
