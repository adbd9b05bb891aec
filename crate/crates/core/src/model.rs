//! Model vectors, the parameter box and the two server-side primitives
//! (projection and weighted aggregation).

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// A point θ in the parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("model vector has non-finite entries"));
        }
        Ok(ModelVector(coords))
    }

    pub fn zeros(d: usize) -> Self {
        ModelVector(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn distance(&self, other: &ModelVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ModelVector {
    /// Unchecked conversion; finiteness is the caller's responsibility.
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

impl std::ops::Index<usize> for ModelVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// The compact parameter set Θ, an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = ParameterBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(d: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; d], vec![hi; d])
    }

    pub fn validate(&self) -> Result<()> {
        check_len(self.lower.len(), self.upper.len(), "box upper bound")?;
        for (j, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("box bound {j} is not finite")));
            }
            if lo > hi {
                return Err(Error::config(format!(
                    "box lower bound {lo} exceeds upper bound {hi} at coordinate {j}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (lo, hi))| lo <= x && x <= hi)
    }

    pub(crate) fn clamp_in_place(&self, theta: &mut [f64]) {
        for (x, (lo, hi)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Componentwise clamp of `theta` into the box.
pub fn project(theta: &ModelVector, bounds: &ParameterBox) -> Result<ModelVector> {
    check_len(bounds.dim(), theta.dim(), "projection")?;
    let mut out = theta.clone();
    bounds.clamp_in_place(out.coords_mut());
    Ok(out)
}

/// Convex combination of `models` with `weights` renormalized to sum to one.
///
/// Computed as `m_0 + Σ w_i (m_i - m_0)` so that identical inputs come back
/// bit-for-bit.
pub fn weighted_aggregate(models: &[ModelVector], weights: &[f64]) -> Result<ModelVector> {
    check_len(models.len(), weights.len(), "aggregation weights")?;
    if models.is_empty() {
        return Err(Error::EmptyEnrollment);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::config("aggregation weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::config("aggregation weights sum to zero"));
    }
    let d = models[0].dim();
    for m in models {
        check_len(d, m.dim(), "aggregated model")?;
    }
    let base = models[0].coords();
    let mut out = base.to_vec();
    for j in 0..d {
        let shift: f64 = models
            .iter()
            .zip(weights)
            .map(|(m, w)| (w / total) * (m.coords()[j] - base[j]))
            .sum();
        out[j] += shift;
    }
    Ok(ModelVector(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(v: &[f64]) -> ModelVector {
        ModelVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn clamps_into_box() {
        let b = ParameterBox::cube(1, 0.0, 2.0).unwrap();
        assert_eq!(project(&mv(&[3.0]), &b).unwrap(), mv(&[2.0]));
        let b = ParameterBox::cube(2, -5.0, 5.0).unwrap();
        assert_eq!(project(&mv(&[1.0, -1.0]), &b).unwrap(), mv(&[1.0, -1.0]));
        let b = ParameterBox::cube(2, -1.0, 1.0).unwrap();
        assert_eq!(project(&mv(&[-7.0, 0.5]), &b).unwrap(), mv(&[-1.0, 0.5]));
    }

    #[test]
    fn projection_rejects_wrong_dimension() {
        let b = ParameterBox::cube(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            project(&mv(&[0.5]), &b),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn box_rejects_inverted_bounds() {
        assert!(ParameterBox::new(vec![1.0], vec![0.0]).is_err());
        assert!(ParameterBox::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let a = weighted_aggregate(&[mv(&[1.0]), mv(&[3.0])], &[0.5, 0.5]).unwrap();
        assert_eq!(a, mv(&[2.0]));
        let a = weighted_aggregate(&[mv(&[2.0, 0.0])], &[1.0]).unwrap();
        assert_eq!(a, mv(&[2.0, 0.0]));
        let a = weighted_aggregate(&[mv(&[0.0]), mv(&[4.0])], &[0.25, 0.75]).unwrap();
        assert_eq!(a, mv(&[3.0]));
    }

    #[test]
    fn aggregation_renormalizes_partial_weights() {
        let a = weighted_aggregate(&[mv(&[0.0]), mv(&[4.0])], &[0.1, 0.3]).unwrap();
        assert!((a[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn aggregation_of_nothing_is_an_error() {
        assert!(matches!(
            weighted_aggregate(&[], &[]),
            Err(Error::EmptyEnrollment)
        ));
    }
}
