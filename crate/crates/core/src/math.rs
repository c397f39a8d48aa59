//! Scalar activations, the diagonal Gaussian family and the Bernoulli
//! likelihood.

use crate::error::{Error, Result};

/// Probabilities are clamped into `[LIKELIHOOD_CLAMP, 1 - LIKELIHOOD_CLAMP]`
/// before taking logs.
pub const LIKELIHOOD_CLAMP: f64 = 1e-7;

/// Largest representable probability below one.
const SIGMOID_UPPER: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
pub fn relu(x: f64) -> f64 {
    debug_assert!(!x.is_nan(), "relu: NaN input");
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Logistic function, evaluated without overflow for any finite input.
///
/// The result is kept strictly inside `(0, 1)`: underflow is clamped to the
/// smallest positive normal and saturation to the largest double below one.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    debug_assert!(!x.is_nan(), "sigmoid: NaN input");
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, SIGMOID_UPPER)
}

/// `ln(1 + e^x)`, floored at the smallest positive normal.
#[inline]
pub fn softplus(x: f64) -> f64 {
    debug_assert!(!x.is_nan(), "softplus: NaN input");
    let y = if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    y.max(f64::MIN_POSITIVE)
}

/// Inverse of [`softplus`] for `y > 0`.
#[inline]
pub fn inverse_softplus(y: f64) -> f64 {
    debug_assert!(y > 0.0, "inverse_softplus: non-positive input");
    if y > 20.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Log-density of `N(mean, stddev^2)` at `x`.
pub fn normal_log_density(x: f64, mean: f64, stddev: f64) -> f64 {
    let z = (x - mean) / stddev;
    -0.5 * z * z - stddev.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn normal_density(x: f64, mean: f64, stddev: f64) -> f64 {
    normal_log_density(x, mean, stddev).exp()
}

/// Mean-field Gaussian: independent coordinates with their own mean and
/// standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    stddev: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, stddev: Vec<f64>) -> Result<Self> {
        if mean.len() != stddev.len() {
            return Err(Error::DimensionMismatch {
                context: "DiagonalGaussian stddev",
                expected: mean.len(),
                actual: stddev.len(),
            });
        }
        if let Some(bad) = stddev.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "stddev entries must be finite and positive, got {bad}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("mean entries must be finite".into()));
        }
        Ok(Self { mean, stddev })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            stddev: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn stddev(&self) -> &[f64] {
        &self.stddev
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.mean)
            .zip(&self.stddev)
            .map(|((&x, &m), &s)| normal_log_density(x, m, s))
            .sum()
    }
}

/// Closed-form `KL(q || p)` for one coordinate pair.
#[inline]
pub fn kl_normal(q_mean: f64, q_std: f64, p_mean: f64, p_std: f64) -> f64 {
    let d = q_mean - p_mean;
    (p_std / q_std).ln() + (q_std * q_std + d * d) / (2.0 * p_std * p_std) - 0.5
}

/// Closed-form `KL(q || p)` between diagonal Gaussians, summed over
/// coordinates.
pub fn kl_diag_gaussian(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            context: "kl_diag_gaussian",
            expected: q.dim(),
            actual: p.dim(),
        });
    }
    Ok((0..q.dim())
        .map(|i| kl_normal(q.mean[i], q.stddev[i], p.mean[i], p.stddev[i]))
        .sum())
}

/// `mean + stddev * eps`, elementwise.
pub fn sample_reparameterized(g: &DiagonalGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::DimensionMismatch {
            context: "sample_reparameterized noise",
            expected: g.dim(),
            actual: eps.len(),
        });
    }
    Ok(g.mean
        .iter()
        .zip(&g.stddev)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

#[inline]
fn clamp_probability(p: f64) -> f64 {
    p.clamp(LIKELIHOOD_CLAMP, 1.0 - LIKELIHOOD_CLAMP)
}

/// `y ln p + (1 - y) ln(1 - p)` with `p` clamped away from 0 and 1.
#[inline]
pub fn bernoulli_log_likelihood(y: u8, p: f64) -> f64 {
    debug_assert!(y <= 1, "label must be 0 or 1");
    let p = clamp_probability(p);
    if y == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// Derivative of [`bernoulli_log_likelihood`]`(y, sigmoid(z))` with respect
/// to the logit `z`, where `p = sigmoid(z)`. Zero inside the clamped region.
#[inline]
pub fn bernoulli_logit_gradient(y: u8, p: f64) -> f64 {
    if !(LIKELIHOOD_CLAMP..=1.0 - LIKELIHOOD_CLAMP).contains(&p) {
        0.0
    } else {
        f64::from(y) - p
    }
}
