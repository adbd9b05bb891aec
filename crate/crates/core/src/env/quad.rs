//! E[g(X)] for X ~ N(mean, sd²) by composite Simpson on ±10 sd.

const HALF_WIDTH: f64 = 10.0;
const INTERVALS: usize = 400;

pub(crate) fn normal_expectation(mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
    if sd <= 0.0 {
        return g(mean);
    }
    let h = 2.0 * HALF_WIDTH / INTERVALS as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    for k in 0..=INTERVALS {
        let u = -HALF_WIDTH + k as f64 * h;
        let w = if k == 0 || k == INTERVALS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * norm * (-0.5 * u * u).exp() * g(mean + sd * u);
    }
    acc * h / 3.0
}

/// log(1 + eᵘ) without overflow.
pub(crate) fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}
