//! θ^PO and θ^PS for scoring runs.

use crate::env::{closed_form_optima, ContaminatedClient, Optima};
use crate::model::{ModelVector, ParameterBox};

/// Closed forms when available, otherwise the scalar numeric search.
pub fn optima(clients: &[ContaminatedClient], bounds: &ParameterBox) -> Option<Optima> {
    closed_form_optima(clients).or_else(|| numeric_optima(clients, bounds))
}

fn decoupled(clients: &[ContaminatedClient], theta: f64, deployed: f64) -> Option<f64> {
    let mut total = 0.0;
    for c in clients {
        total += c.alpha * c.env.expected_loss(&[theta], &[deployed])?;
    }
    Some(total)
}

/// Scalar models only: θ^PO by grid search refined with golden sections,
/// θ^PS as the stable root of the decoupled gradient on the diagonal.
pub fn numeric_optima(clients: &[ContaminatedClient], bounds: &ParameterBox) -> Option<Optima> {
    if bounds.dim() != 1 || clients.iter().any(|c| c.env.dim() != 1) {
        return None;
    }
    let (lo, hi) = (bounds.lower[0], bounds.upper[0]);
    let risk = |t: f64| decoupled(clients, t, t);
    risk(lo)?;
    const GRID: usize = 400;
    let at = |k: usize| lo + (hi - lo) * k as f64 / GRID as f64;
    let values: Vec<f64> = (0..=GRID).map(|k| risk(at(k)).unwrap_or(f64::INFINITY)).collect();
    let best = (0..=GRID).min_by(|&a, &b| values[a].total_cmp(&values[b]))?;
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(GRID)));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if risk(c)? < risk(d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let po = 0.5 * (a + b);

    let step = 1e-6 * (hi - lo).max(1e-12);
    let slope = |t: f64| -> Option<f64> {
        Some((decoupled(clients, t + step, t)? - decoupled(clients, t - step, t)?) / (2.0 * step))
    };
    let slopes: Vec<f64> = (0..=GRID).map(|k| slope(at(k)).unwrap_or(f64::NAN)).collect();
    let ps = if slopes[0] >= 0.0 {
        lo
    } else if let Some(k) = (0..GRID).find(|&k| slopes[k] < 0.0 && slopes[k + 1] >= 0.0) {
        let (mut a, mut b) = (at(k), at(k + 1));
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            if slope(m)? < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    } else {
        hi
    };
    Some(Optima {
        theta_po: ModelVector::from(vec![po]),
        theta_ps: ModelVector::from(vec![ps]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GaussianDemandPricing;
    use std::sync::Arc;

    #[test]
    fn numeric_search_matches_pricing_closed_form() {
        let env = Arc::new(GaussianDemandPricing::new(vec![6.0], 2.0, 1.0, 0.0).unwrap());
        let clients = vec![ContaminatedClient::clean(env, 1.0, 10)];
        let bounds = ParameterBox::cube(1, 0.0, 10.0).unwrap();
        let exact = closed_form_optima(&clients).unwrap();
        let num = numeric_optima(&clients, &bounds).unwrap();
        assert!((num.theta_po[0] - exact.theta_po[0]).abs() < 1e-6);
        assert!((num.theta_ps[0] - exact.theta_ps[0]).abs() < 1e-6);
    }
}
