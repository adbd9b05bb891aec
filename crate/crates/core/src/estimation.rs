//! From raw samples to an update direction: f̂ history, finite-difference
//! Jacobian, the two performative-gradient terms, robust filtering and
//! adaptive sample sizing.

use std::collections::VecDeque;

use crate::env::{Environment, Sample};
use crate::error::{check_len, Error, Result};
use crate::linalg::{pinv_from_svd, svd, top_right_singular_vector, DenseMatrix};

/// The H most recent (θ, f̂) pairs plus the current one.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    h: usize,
    entries: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl HistoryWindow {
    pub fn new(h: usize) -> Self {
        HistoryWindow {
            h,
            entries: VecDeque::with_capacity(h + 1),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True once H + 1 entries are present.
    pub fn is_full(&self) -> bool {
        self.entries.len() == self.h + 1
    }

    pub fn push(&mut self, theta: Vec<f64>, f_hat: Vec<f64>) -> Result<()> {
        if let Some((t0, f0)) = self.entries.front() {
            check_len(t0.len(), theta.len(), "history theta")?;
            check_len(f0.len(), f_hat.len(), "history f_hat")?;
        }
        if self.entries.len() == self.h + 1 {
            self.entries.pop_front();
        }
        self.entries.push_back((theta, f_hat));
        Ok(())
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.entries.iter().map(|(t, f)| (t.as_slice(), f.as_slice()))
    }

    pub fn current(&self) -> Option<(&[f64], &[f64])> {
        self.entries.back().map(|(t, f)| (t.as_slice(), f.as_slice()))
    }

    /// Columns θ^{t−k} − θ^t and f̂^{t−k} − f̂^t for k = H..1.
    fn deltas(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let (cur_t, cur_f) = self
            .entries
            .back()
            .ok_or_else(|| Error::config("empty history window"))?;
        let past = self.entries.len() - 1;
        if past == 0 {
            return Err(Error::config("history window needs at least two entries"));
        }
        let (d, k) = (cur_t.len(), cur_f.len());
        let mut dt = DenseMatrix::zeros(d, past);
        let mut df = DenseMatrix::zeros(k, past);
        for (col, (t, f)) in self.entries.iter().take(past).enumerate() {
            for i in 0..d {
                dt[(i, col)] = t[i] - cur_t[i];
            }
            for i in 0..k {
                df[(i, col)] = f[i] - cur_f[i];
            }
        }
        Ok((dt, df))
    }

    /// Frobenius norm of Δθ (0 before two entries exist).
    pub fn delta_theta_norm(&self) -> f64 {
        self.deltas().map_or(0.0, |(dt, _)| dt.frobenius_norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSource {
    Local,
    ServerCluster,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianWarning {
    /// Δθ has singular values below the rank tolerance.
    RankDeficient,
    /// All history points coincide; the estimate is zero.
    Degenerate,
}

/// Estimate of df/dθ (`f_dim × d`).
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub matrix: DenseMatrix,
    /// Smallest singular value of Δθ kept by the pseudo-inverse.
    pub min_singular_value: f64,
    pub source: JacobianSource,
    pub warning: Option<JacobianWarning>,
}

impl JacobianEstimate {
    pub fn usable(&self) -> bool {
        self.warning.is_none()
    }
}

/// Δf (Δθ)† from a full window.
pub fn fd_jacobian(window: &HistoryWindow, rank_tol: f64) -> Result<JacobianEstimate> {
    if !window.is_full() {
        return Err(Error::config(format!(
            "finite-difference Jacobian needs {} history entries, have {}",
            window.h + 1,
            window.len()
        )));
    }
    let (dt, df) = window.deltas()?;
    jacobian_from_deltas(&dt, &df, rank_tol, JacobianSource::Local)
}

fn jacobian_from_deltas(
    dt: &DenseMatrix,
    df: &DenseMatrix,
    rank_tol: f64,
    source: JacobianSource,
) -> Result<JacobianEstimate> {
    let dec = svd(dt)?;
    let smax = dec.singular_values.first().copied().unwrap_or(0.0);
    if smax <= f64::MIN_POSITIVE {
        return Ok(JacobianEstimate {
            matrix: DenseMatrix::zeros(df.rows(), dt.rows()),
            min_singular_value: 0.0,
            source,
            warning: Some(JacobianWarning::Degenerate),
        });
    }
    let cutoff = rank_tol * smax;
    let smin_all = dec.singular_values.last().copied().unwrap_or(0.0);
    let min_kept = dec
        .singular_values
        .iter()
        .copied()
        .filter(|s| *s > cutoff)
        .fold(f64::INFINITY, f64::min);
    let pinv = pinv_from_svd(dt, &dec, rank_tol);
    let matrix = df.matmul(&pinv)?;
    Ok(JacobianEstimate {
        matrix,
        min_singular_value: min_kept,
        source,
        warning: (smin_all <= cutoff).then_some(JacobianWarning::RankDeficient),
    })
}

/// Slot-wise average of the cluster's windows, then [`fd_jacobian`].
pub fn server_jacobian(cluster: &[&HistoryWindow], rank_tol: f64) -> Result<JacobianEstimate> {
    let first = cluster
        .first()
        .ok_or_else(|| Error::config("server Jacobian needs a nonempty cluster"))?;
    let (d, k) = first
        .current()
        .map(|(t, f)| (t.len(), f.len()))
        .ok_or_else(|| Error::config("server Jacobian needs full windows"))?;
    let slots = first.len();
    for w in cluster {
        if !w.is_full() || w.len() != slots {
            return Err(Error::config("server Jacobian needs full windows of equal length"));
        }
        let (t, f) = w.current().expect("full window");
        check_len(d, t.len(), "cluster model dimension")?;
        check_len(k, f.len(), "cluster f dimension")?;
    }
    let m = cluster.len() as f64;
    let mut avg = HistoryWindow::new(first.h);
    let iters: Vec<Vec<(&[f64], &[f64])>> = cluster.iter().map(|w| w.entries().collect()).collect();
    for s in 0..slots {
        let mut t = vec![0.0; d];
        let mut f = vec![0.0; k];
        for entries in &iters {
            let (ti, fi) = entries[s];
            t.iter_mut().zip(ti).for_each(|(a, b)| *a += b / m);
            f.iter_mut().zip(fi).for_each(|(a, b)| *a += b / m);
        }
        avg.push(t, f)?;
    }
    let (dt, df) = avg.deltas()?;
    jacobian_from_deltas(&dt, &df, rank_tol, JacobianSource::ServerCluster)
}

/// The local update direction and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g1: Vec<f64>,
    pub g2: Option<Vec<f64>>,
    pub loss_mean: f64,
    pub n_used: usize,
    pub n_removed: usize,
}

impl GradientEstimate {
    /// g1 + g2, with g2 = 0 when absent.
    pub fn direction(&self) -> Vec<f64> {
        match &self.g2 {
            Some(g2) => self.g1.iter().zip(g2).map(|(a, b)| a + b).collect(),
            None => self.g1.clone(),
        }
    }
}

/// Mean per-sample gradient and mean loss.
pub fn grad_l1(samples: &[Sample], theta: &[f64], env: &dyn Environment) -> (Vec<f64>, f64) {
    let d = theta.len();
    let mut g = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut loss = 0.0;
    for s in samples {
        env.grad(s, theta, &mut buf);
        g.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
        loss += env.loss(s, theta);
    }
    let n = samples.len().max(1) as f64;
    g.iter_mut().for_each(|a| *a /= n);
    (g, loss / n)
}

/// ∇L₂ estimate and the number of samples dropped for a vanishing density.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Term {
    pub g2: Vec<f64>,
    pub excluded: usize,
}

/// (1/n) Σ_j ℓ(z_j; θ) · Jᵀ score(z_j, f̂).
pub fn grad_l2(
    samples: &[Sample],
    theta: &[f64],
    env: &dyn Environment,
    jac: &DenseMatrix,
    f_hat: &[f64],
) -> Result<L2Term> {
    check_len(env.f_dim(), jac.rows(), "Jacobian rows")?;
    check_len(theta.len(), jac.cols(), "Jacobian columns")?;
    check_len(env.f_dim(), f_hat.len(), "f_hat")?;
    let mut weighted = vec![0.0; env.f_dim()];
    let mut used = 0usize;
    let mut excluded = 0usize;
    for s in samples {
        match env.score(s, f_hat) {
            Some(sc) => {
                let l = env.loss(s, theta);
                weighted.iter_mut().zip(&sc).for_each(|(w, x)| *w += l * x);
                used += 1;
            }
            None => excluded += 1,
        }
    }
    if used == 0 {
        return Ok(L2Term {
            g2: vec![0.0; theta.len()],
            excluded,
        });
    }
    weighted.iter_mut().for_each(|w| *w /= used as f64);
    Ok(L2Term {
        g2: jac.transpose_matvec(&weighted)?,
        excluded,
    })
}

/// τ_j = (c_jᵀ v)² for each row c_j of a row-major `centered` block with
/// `v.len()` columns.
pub fn outlier_scores(centered: &[f64], v: &[f64]) -> Vec<f64> {
    centered
        .chunks(v.len().max(1))
        .map(|row| {
            let p: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            p * p
        })
        .collect()
}

/// Result of the robust filter.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustOutcome {
    /// `kept[j]` is true for samples in the cleaned set S'.
    pub kept: Vec<bool>,
    pub g1: Vec<f64>,
    pub loss_mean: f64,
    pub removed: usize,
    pub passes: usize,
}

impl RobustOutcome {
    /// Splits a batch into (kept, removed) without cloning samples.
    pub fn partition(&self, batch: Vec<Sample>) -> (Vec<Sample>, Vec<Sample>) {
        let mut keep = Vec::with_capacity(batch.len() - self.removed);
        let mut drop = Vec::with_capacity(self.removed);
        for (s, k) in batch.into_iter().zip(&self.kept) {
            if *k {
                keep.push(s);
            } else {
                drop.push(s);
            }
        }
        (keep, drop)
    }
}

fn mean_over(grads: &[f64], d: usize, idx: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for &i in idx {
        for j in 0..d {
            m[j] += grads[i * d + j];
        }
    }
    let n = idx.len().max(1) as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// SVD-score outlier filter over per-sample gradients.
///
/// Each pass scores τ_j = ((∇ℓ_j − mean)ᵀ v)² along the top right singular
/// vector of the centered gradients, bins τ into `bins` equal segments of
/// [0, max τ] and cuts at the lower edge of the first bin holding fewer than
/// `c · |S|` scores. Passes stop when the mean moves by less than `j`
/// (relative) or the set is down to n/2. The set never shrinks below
/// ⌈n/2⌉: a cut that would go further keeps the ⌈n/2⌉ lowest scores.
pub fn robust_gradient(
    samples: &[Sample],
    theta: &[f64],
    env: &dyn Environment,
    c: f64,
    j: f64,
    bins: usize,
) -> Result<RobustOutcome> {
    let n = samples.len();
    let d = theta.len();
    let mut grads = vec![0.0; n * d];
    let mut losses = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        env.grad(s, theta, &mut grads[i * d..(i + 1) * d]);
        losses.push(env.loss(s, theta));
    }
    let mut current: Vec<usize> = (0..n).collect();
    let mut mean = mean_over(&grads, d, &current);
    let mut passes = 0usize;
    if n >= 2 && bins >= 1 {
        let floor = n.div_ceil(2);
        loop {
            let m = current.len();
            let mut centered = Vec::with_capacity(m * d);
            for &i in &current {
                for k in 0..d {
                    centered.push(grads[i * d + k] - mean[k]);
                }
            }
            let mat = DenseMatrix::new(m, d, centered.clone())?;
            let Some(v) = top_right_singular_vector(&mat)? else {
                break;
            };
            let tau = outlier_scores(&centered, &v);
            let max_tau = tau.iter().copied().fold(0.0, f64::max);
            if max_tau < 1e-12 {
                break;
            }
            let width = max_tau / bins as f64;
            let mut counts = vec![0usize; bins];
            for t in &tau {
                let b = ((t / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let threshold = c * m as f64;
            let Some(bin) = counts.iter().position(|&k| (k as f64) < threshold) else {
                break;
            };
            let phi = bin as f64 * width;
            let survivors: Vec<usize> = current
                .iter()
                .zip(&tau)
                .filter(|(_, t)| **t < phi)
                .map(|(i, _)| *i)
                .collect();
            passes += 1;
            if survivors.is_empty() {
                break;
            }
            if survivors.len() < floor {
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| tau[a].total_cmp(&tau[b]));
                let mut keep: Vec<usize> = order[..floor].iter().map(|&k| current[k]).collect();
                keep.sort_unstable();
                current = keep;
                mean = mean_over(&grads, d, &current);
                break;
            }
            let new_mean = mean_over(&grads, d, &survivors);
            let shift: Vec<f64> = new_mean.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let old_norm = norm(&mean);
            let rel = if old_norm > 0.0 {
                norm(&shift) / old_norm
            } else if norm(&shift) == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            current = survivors;
            mean = new_mean;
            if rel < j || 2 * current.len() <= n {
                break;
            }
        }
    }
    let mut kept = vec![false; n];
    for &i in &current {
        kept[i] = true;
    }
    let loss_mean = current.iter().map(|&i| losses[i]).sum::<f64>() / current.len().max(1) as f64;
    Ok(RobustOutcome {
        kept,
        g1: mean,
        loss_mean,
        removed: n - current.len(),
        passes,
    })
}

/// Running proxies for the constants of the sample-size rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSizerState {
    /// ℓ_max proxy: magnitude of the last iteration's mean loss.
    pub ell_max: f64,
    /// ‖df̂/dθ‖.
    pub f_hat: f64,
    /// Largest per-sample gradient norm in the last batch.
    pub g_hat: f64,
    /// Change of the Jacobian estimate across the window per unit move of θ.
    pub m_hat: f64,
    pub sigma2_hat: f64,
    /// Failure probability φ.
    pub phi: f64,
    /// Error bound Φ.
    pub big_phi: f64,
    pub n_min: usize,
    pub n_max: usize,
    jacobians: VecDeque<(Vec<f64>, DenseMatrix)>,
}

impl AdaptiveSizerState {
    pub fn new(phi: f64, big_phi: f64, n_min: usize, n_max: usize) -> Result<Self> {
        if !(phi > 0.0 && phi < 1.0) || n_min > n_max || n_min == 0 {
            return Err(Error::config("adaptive sizer needs phi in (0, 1) and 1 <= n_min <= n_max"));
        }
        Ok(AdaptiveSizerState {
            ell_max: 0.0,
            f_hat: 0.0,
            g_hat: 0.0,
            m_hat: 0.0,
            sigma2_hat: 0.0,
            phi,
            big_phi,
            n_min,
            n_max,
            jacobians: VecDeque::new(),
        })
    }

    /// Folds in one iteration's statistics. `window_h` bounds how far back
    /// the Jacobian difference reaches.
    pub fn observe(
        &mut self,
        loss_mean: f64,
        max_grad_norm: f64,
        sigma2: f64,
        jacobian: Option<(&[f64], &DenseMatrix)>,
        window_h: usize,
    ) {
        self.ell_max = loss_mean.abs();
        self.g_hat = max_grad_norm;
        self.sigma2_hat = sigma2;
        if let Some((theta, jac)) = jacobian {
            self.f_hat = jac.frobenius_norm();
            if self.jacobians.len() == window_h {
                if let Some((t_old, j_old)) = self.jacobians.front() {
                    let dtheta = theta
                        .iter()
                        .zip(t_old)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if let Ok(diff) = jac.sub(j_old) {
                        if dtheta > 0.0 {
                            self.m_hat = diff.frobenius_norm() / dtheta;
                        }
                    }
                }
            }
            if self.jacobians.len() == window_h.max(1) {
                self.jacobians.pop_front();
            }
            self.jacobians.push_back((theta.to_vec(), jac.clone()));
        }
    }
}

/// n ≥ 2(2ℓ²H‖Δθ‖⁻² + F²)σ² ln(2/φ) / (2Φ − M²η²G⁴H⁶‖Δθ‖²ℓ²), rounded up
/// and clamped to [n_min, n_max]; n_max when the denominator is not
/// positive.
pub fn adaptive_sample_size(
    state: &AdaptiveSizerState,
    h: usize,
    eta: f64,
    delta_theta_norm: f64,
) -> usize {
    let hf = h as f64;
    let l2 = state.ell_max * state.ell_max;
    let dt2 = delta_theta_norm * delta_theta_norm;
    let numerator = 2.0
        * (2.0 * l2 * hf / dt2 + state.f_hat * state.f_hat)
        * state.sigma2_hat
        * (2.0 / state.phi).ln();
    let denominator = 2.0 * state.big_phi
        - state.m_hat.powi(2) * eta * eta * state.g_hat.powi(4) * hf.powi(6) * dt2 * l2;
    if !(denominator > 0.0) || numerator.is_nan() {
        return state.n_max;
    }
    let n = (numerator / denominator).ceil();
    if !n.is_finite() || n >= state.n_max as f64 {
        return state.n_max;
    }
    (n.max(0.0) as usize).clamp(state.n_min, state.n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GaussianDemandPricing;
    use crate::rng::{stream, StreamLabel};
    use rand::Rng;

    fn window(points: &[(f64, f64)], h: usize) -> HistoryWindow {
        let mut w = HistoryWindow::new(h);
        for (t, f) in points {
            w.push(vec![*t], vec![*f]).unwrap();
        }
        w
    }

    #[test]
    fn window_keeps_h_plus_one() {
        let w = window(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], 2);
        assert_eq!(w.len(), 3);
        assert!(w.is_full());
        assert_eq!(w.entries().next().unwrap().0, &[1.0]);
    }

    #[test]
    fn linear_scalar_jacobian_is_exact() {
        let w = window(&[(0.9, 1.8), (1.0, 2.0), (1.1, 2.2)], 2);
        let j = fd_jacobian(&w, 1e-10).unwrap();
        assert!((j.matrix[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(j.usable());
        assert_eq!(j.source, JacobianSource::Local);
    }

    #[test]
    fn identical_history_is_degenerate() {
        let w = window(&[(1.0, 2.0), (1.0, 2.0), (1.0, 2.0)], 2);
        let j = fd_jacobian(&w, 1e-10).unwrap();
        assert_eq!(j.warning, Some(JacobianWarning::Degenerate));
        assert_eq!(j.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn short_window_is_an_error() {
        let w = window(&[(1.0, 2.0)], 2);
        assert!(fd_jacobian(&w, 1e-10).is_err());
    }

    #[test]
    fn collinear_history_is_rank_deficient() {
        let mut w = HistoryWindow::new(2);
        for k in 0..3 {
            let s = k as f64;
            w.push(vec![s, 2.0 * s], vec![s]).unwrap();
        }
        let j = fd_jacobian(&w, 1e-10).unwrap();
        assert_eq!(j.warning, Some(JacobianWarning::RankDeficient));
    }

    #[test]
    fn singleton_cluster_matches_local() {
        let w = window(&[(0.2, 0.1), (0.5, 0.9), (0.4, 0.3)], 2);
        let local = fd_jacobian(&w, 1e-10).unwrap();
        let server = server_jacobian(&[&w], 1e-10).unwrap();
        assert_eq!(local.matrix, server.matrix);
        assert_eq!(server.source, JacobianSource::ServerCluster);
    }

    #[test]
    fn grad_l1_examples() {
        let env = GaussianDemandPricing::new(vec![0.0, 0.0], 1.0, 1.0, 0.0).unwrap();
        let batch = vec![Sample::new(vec![1.0, 2.0]), Sample::new(vec![3.0, 4.0])];
        let (g, _) = grad_l1(&batch, &[0.5, 0.5], &env);
        assert_eq!(g, vec![-2.0, -3.0]);
        let (g, l) = grad_l1(&batch[..1], &[0.5, 0.5], &env);
        assert_eq!(g, vec![-1.0, -2.0]);
        assert_eq!(l, -1.5);
    }

    #[test]
    fn grad_l2_examples() {
        let env = GaussianDemandPricing::new(vec![0.0], 1.0, 1.0, 0.0).unwrap();
        let zero = DenseMatrix::zeros(1, 1);
        let batch = vec![Sample::new(vec![4.0])];
        let t = grad_l2(&batch, &[-1.25], &env, &zero, &[3.0]).unwrap();
        assert_eq!(t.g2, vec![0.0]);
        // ℓ = −θz = 5 at θ = −1.25, z = 4; J = −2; score = 1.
        let jac = DenseMatrix::new(1, 1, vec![-2.0]).unwrap();
        let t = grad_l2(&batch, &[-1.25], &env, &jac, &[3.0]).unwrap();
        assert_eq!(t.g2, vec![-10.0]);
    }

    #[test]
    fn identical_gradients_are_not_filtered() {
        let env = GaussianDemandPricing::new(vec![0.0, 0.0], 1.0, 1.0, 0.0).unwrap();
        let batch = vec![Sample::new(vec![-1.0, -1.0]); 10];
        let out = robust_gradient(&batch, &[0.0, 0.0], &env, 0.1, 0.01, 20).unwrap();
        assert_eq!(out.removed, 0);
        assert_eq!(out.g1, vec![1.0, 1.0]);
    }

    #[test]
    fn tiny_batches_pass_through() {
        let env = GaussianDemandPricing::new(vec![0.0], 1.0, 1.0, 0.0).unwrap();
        let batch = vec![Sample::new(vec![3.0])];
        let out = robust_gradient(&batch, &[0.0], &env, 0.1, 0.01, 20).unwrap();
        assert_eq!(out.removed, 0);
        assert_eq!(out.g1, vec![-3.0]);
    }

    #[test]
    fn planted_outliers_are_removed() {
        // ∇ℓ = −z for pricing, so planting z = −10 plants gradient +10.
        let env = GaussianDemandPricing::new(vec![0.0, 0.0], 1.0, 1.0, 0.0).unwrap();
        let mut rng = stream(11, 0, StreamLabel::Sample, 0);
        let mut batch: Vec<Sample> = (0..90)
            .map(|_| {
                Sample::new(vec![
                    0.1 * crate::env::normal(&mut rng),
                    0.1 * crate::env::normal(&mut rng),
                ])
            })
            .collect();
        for _ in 0..10 {
            batch.push(Sample::new(vec![-10.0, -10.0]).into_contaminant());
        }
        let out = robust_gradient(&batch, &[0.0, 0.0], &env, 0.1, 0.01, 20).unwrap();
        let (kept, removed) = out.partition(batch);
        assert!(removed.iter().filter(|s| s.oracle_is_contaminant()).count() == 10);
        let (clean_mean, _) = grad_l1(&kept, &[0.0, 0.0], &env);
        assert!(norm(&clean_mean.iter().zip(&out.g1).map(|(a, b)| a - b).collect::<Vec<_>>()) < 0.1);
    }

    #[test]
    fn filter_never_drops_below_half() {
        let env = GaussianDemandPricing::new(vec![0.0], 1.0, 1.0, 0.0).unwrap();
        let mut rng = stream(3, 0, StreamLabel::Sample, 0);
        for trial in 0..50 {
            let n = 3 + trial;
            let batch: Vec<Sample> = (0..n)
                .map(|_| Sample::new(vec![rng.random::<f64>().powi(3) * 10.0]))
                .collect();
            let out = robust_gradient(&batch, &[0.0], &env, 0.5, 0.001, 4).unwrap();
            assert!(n - out.removed >= n.div_ceil(2));
        }
    }

    #[test]
    fn adaptive_size_examples() {
        let mut s = AdaptiveSizerState::new(0.05, 0.5, 1, 10_000).unwrap();
        s.ell_max = 1.0;
        s.f_hat = 1.0;
        s.sigma2_hat = 1.0;
        s.m_hat = 0.0;
        assert_eq!(adaptive_sample_size(&s, 2, 0.01, 0.1), 2959);
        let mut small = s.clone();
        small.n_max = 1000;
        assert_eq!(adaptive_sample_size(&small, 2, 0.01, 0.1), 1000);
        let mut big_m = s.clone();
        big_m.m_hat = 1e6;
        big_m.g_hat = 1.0;
        assert_eq!(adaptive_sample_size(&big_m, 2, 0.01, 0.1), 10_000);
        let mut loose = s.clone();
        loose.n_min = 50;
        loose.big_phi = 1e12;
        assert_eq!(adaptive_sample_size(&loose, 2, 0.01, 0.1), 50);
    }
}
