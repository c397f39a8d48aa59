//! Monte-Carlo ELBO and its exact pathwise gradient.
//!
//! For noise draws `eps_1..eps_S` the estimate is
//!
//! ```text
//! likelihood = (1/S) * sum_s sum_n ln p(y_n | x_n, mu + softplus(rho) * eps_s)
//! elbo       = likelihood - kl_scale * KL(q || prior)
//! ```
//!
//! with the KL term evaluated in closed form. The gradient differentiates
//! exactly this value for the same draws.

use serde::Serialize;

use crate::data::LabeledTable;
use crate::error::{Error, Result};
use crate::math::{bernoulli_log_likelihood, bernoulli_logit_gradient, kl_normal, sigmoid, softplus};
use crate::model::{BnnClassifier, Realization, PRIOR_MEAN, PRIOR_STDDEV};
use crate::random::RandomSource;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ElboEstimate {
    pub elbo: f64,
    pub likelihood_term: f64,
    pub kl_term: f64,
}

/// Partial derivatives of the ELBO, in the canonical parameter order of
/// [`BnnClassifier::means`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub mean: Vec<f64>,
    pub rho: Vec<f64>,
}

impl ModelGradient {
    fn zeros(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            rho: vec![0.0; n],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(&self.rho).all(|v| v.is_finite())
    }
}

/// Closed-form KL divergence of the variational posterior from the prior.
pub fn kl_to_prior(model: &BnnClassifier) -> f64 {
    model
        .means()
        .iter()
        .zip(model.rhos())
        .map(|(&m, r)| kl_normal(m, softplus(r), PRIOR_MEAN, PRIOR_STDDEV))
        .sum()
}

/// Gradient of [`kl_to_prior`] (not negated).
pub fn kl_to_prior_gradient(model: &BnnClassifier) -> ModelGradient {
    let prior_var = PRIOR_STDDEV * PRIOR_STDDEV;
    let mean = model.means().iter().map(|m| (m - PRIOR_MEAN) / prior_var).collect();
    let rho = model
        .rhos()
        .into_iter()
        .map(|r| {
            let s = softplus(r);
            (s / prior_var - 1.0 / s) * sigmoid(r)
        })
        .collect();
    ModelGradient { mean, rho }
}

/// Standard-normal noise for `samples` draws; draw `s` comes from child
/// stream `s` of `rng`.
pub fn draw_noise(model: &BnnClassifier, rng: &RandomSource, samples: usize) -> Vec<Vec<f64>> {
    (0..samples as u64)
        .map(|s| {
            let mut eps = vec![0.0; model.param_count()];
            rng.child(s).fill_standard_normal(&mut eps);
            eps
        })
        .collect()
}

fn check_inputs(model: &BnnClassifier, batch: &LabeledTable, noise: &[Vec<f64>], kl_scale: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if noise.is_empty() {
        return Err(Error::InvalidConfig("at least one Monte-Carlo sample is required".into()));
    }
    if !(kl_scale >= 0.0 && kl_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("kl_scale must be >= 0, got {kl_scale}")));
    }
    if batch.n_features() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "batch features",
            expected: model.input_dim(),
            actual: batch.n_features(),
        });
    }
    Ok(())
}

/// ELBO for explicit noise draws.
pub fn elbo_with_noise(
    model: &BnnClassifier,
    batch: &LabeledTable,
    noise: &[Vec<f64>],
    kl_scale: f64,
) -> Result<ElboEstimate> {
    check_inputs(model, batch, noise, kl_scale)?;
    let mut likelihood = 0.0;
    for eps in noise {
        let net = model.realize(eps)?;
        likelihood += batch
            .rows()
            .zip(batch.labels())
            .map(|(x, &y)| bernoulli_log_likelihood(y, net.predict_unchecked(x)))
            .sum::<f64>();
    }
    likelihood /= noise.len() as f64;
    let kl = kl_to_prior(model);
    Ok(ElboEstimate {
        elbo: likelihood - kl_scale * kl,
        likelihood_term: likelihood,
        kl_term: kl,
    })
}

pub fn elbo_estimate(
    model: &BnnClassifier,
    batch: &LabeledTable,
    rng: &RandomSource,
    samples: usize,
    kl_scale: f64,
) -> Result<ElboEstimate> {
    elbo_with_noise(model, batch, &draw_noise(model, rng, samples), kl_scale)
}

/// Sum over the batch of `d ln p(y|x, w) / dw` for one concrete network, in
/// canonical parameter order. Returns the summed log-likelihood as well.
fn likelihood_weight_gradient(net: &Realization, batch: &LabeledTable, out: &mut [f64]) -> f64 {
    let n_layers = net.layers.len();
    let mut offsets = Vec::with_capacity(n_layers);
    let mut acc = 0;
    for l in &net.layers {
        offsets.push(acc);
        acc += l.fan_in * l.fan_out + l.fan_out;
    }

    // inputs[k] is the input to layer k; pre[k] its pre-activation.
    let mut inputs: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.fan_in]).collect();
    let mut pre: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
    let mut total = 0.0;

    for (x, &y) in batch.rows().zip(batch.labels()) {
        inputs[0].copy_from_slice(x);
        for k in 0..n_layers {
            net.layers[k].affine_into(&inputs[k], &mut pre[k]);
            if k + 1 < n_layers {
                for (a, &z) in inputs[k + 1].iter_mut().zip(&pre[k]) {
                    *a = if z > 0.0 { z } else { 0.0 };
                }
            }
        }
        let p = sigmoid(pre[n_layers - 1][0]);
        total += bernoulli_log_likelihood(y, p);

        let mut delta = vec![bernoulli_logit_gradient(y, p)];
        for k in (0..n_layers).rev() {
            let layer = &net.layers[k];
            let base = offsets[k];
            let bias_base = base + layer.fan_in * layer.fan_out;
            for (i, &a) in inputs[k].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &mut out[base + i * layer.fan_out..base + (i + 1) * layer.fan_out];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += a * d;
                }
            }
            for (g, d) in out[bias_base..bias_base + layer.fan_out].iter_mut().zip(&delta) {
                *g += d;
            }
            if k > 0 {
                delta = (0..layer.fan_in)
                    .map(|i| {
                        // ReLU subgradient at 0 is 0.
                        if pre[k - 1][i] > 0.0 {
                            let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                            row.iter().zip(&delta).map(|(w, d)| w * d).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElboGradient {
    pub estimate: ElboEstimate,
    pub gradient: ModelGradient,
}

/// ELBO value and its exact gradient for explicit noise draws.
pub fn elbo_gradient_with_noise(
    model: &BnnClassifier,
    batch: &LabeledTable,
    noise: &[Vec<f64>],
    kl_scale: f64,
) -> Result<ElboGradient> {
    check_inputs(model, batch, noise, kl_scale)?;
    let n = model.param_count();
    let rhos = model.rhos();
    let rho_slope: Vec<f64> = rhos.iter().map(|&r| sigmoid(r)).collect();
    let inv_s = 1.0 / noise.len() as f64;

    let mut grad = ModelGradient::zeros(n);
    let mut likelihood = 0.0;
    let mut dw = vec![0.0; n];
    for eps in noise {
        let net = model.realize(eps)?;
        dw.iter_mut().for_each(|v| *v = 0.0);
        likelihood += likelihood_weight_gradient(&net, batch, &mut dw);
        for p in 0..n {
            grad.mean[p] += dw[p] * inv_s;
            grad.rho[p] += dw[p] * eps[p] * rho_slope[p] * inv_s;
        }
    }
    likelihood *= inv_s;

    let kl = kl_to_prior(model);
    let kl_grad = kl_to_prior_gradient(model);
    for p in 0..n {
        grad.mean[p] -= kl_scale * kl_grad.mean[p];
        grad.rho[p] -= kl_scale * kl_grad.rho[p];
    }
    Ok(ElboGradient {
        estimate: ElboEstimate {
            elbo: likelihood - kl_scale * kl,
            likelihood_term: likelihood,
            kl_term: kl,
        },
        gradient: grad,
    })
}

pub fn elbo_gradient(
    model: &BnnClassifier,
    batch: &LabeledTable,
    rng: &RandomSource,
    samples: usize,
    kl_scale: f64,
) -> Result<ElboGradient> {
    elbo_gradient_with_noise(model, batch, &draw_noise(model, rng, samples), kl_scale)
}
