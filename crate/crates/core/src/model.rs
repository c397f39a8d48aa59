//! Variational network: per-parameter Gaussian posteriors over the weights
//! and biases of a fully connected ReLU network with one sigmoid output.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{inverse_softplus, normal_density, relu, sigmoid, softplus, DiagonalGaussian};
use crate::random::RandomSource;

/// Default architecture: 8 inputs, 12 hidden units, one output.
pub const DEFAULT_LAYER_SIZES: [usize; 3] = [8, 12, 1];

pub const PRIOR_MEAN: f64 = 0.0;
pub const PRIOR_STDDEV: f64 = 1.0;

pub const INIT_MEAN_STDDEV: f64 = 0.1;
pub const INIT_POSTERIOR_STDDEV: f64 = 0.05;

/// Variational parameters of one dense layer. Weights are stored row-major
/// with shape `fan_in x fan_out`; the standard deviation of every parameter
/// is `softplus(rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerVariational {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_mean: Vec<f64>,
    pub weight_rho: Vec<f64>,
    pub bias_mean: Vec<f64>,
    pub bias_rho: Vec<f64>,
}

impl LayerVariational {
    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    fn check(&self) -> Result<()> {
        let w = self.fan_in * self.fan_out;
        let shapes = [
            ("weight_mean", self.weight_mean.len(), w),
            ("weight_rho", self.weight_rho.len(), w),
            ("bias_mean", self.bias_mean.len(), self.fan_out),
            ("bias_rho", self.bias_rho.len(), self.fan_out),
        ];
        for (name, actual, expected) in shapes {
            if actual != expected {
                return Err(Error::MalformedCheckpoint(format!(
                    "{name} has {actual} entries, expected {expected}"
                )));
            }
        }
        let finite = self
            .weight_mean
            .iter()
            .chain(&self.weight_rho)
            .chain(&self.bias_mean)
            .chain(&self.bias_rho)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::MalformedCheckpoint("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Mean-field Bayesian classifier. Hidden layers use ReLU, the single output
/// unit uses a sigmoid, and every scalar parameter has the fixed prior
/// `N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BnnClassifier {
    layers: Vec<LayerVariational>,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) || sizes[sizes.len() - 1] != 1 {
        return Err(Error::InvalidLayerSizes(sizes.to_vec()));
    }
    Ok(())
}

/// Fresh model: weight means from `N(0, 0.1^2)`, bias means zero, and every
/// posterior standard deviation at 0.05.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<BnnClassifier> {
    validate_sizes(layer_sizes)?;
    let mut rng = RandomSource::new(seed, 0);
    let rho0 = inverse_softplus(INIT_POSTERIOR_STDDEV);
    let layers = layer_sizes
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let n = fan_in * fan_out;
            let weight_mean = (0..n)
                .map(|_| INIT_MEAN_STDDEV * rng.standard_normal())
                .collect();
            LayerVariational {
                fan_in,
                fan_out,
                weight_mean,
                weight_rho: vec![rho0; n],
                bias_mean: vec![0.0; fan_out],
                bias_rho: vec![rho0; fan_out],
            }
        })
        .collect();
    Ok(BnnClassifier { layers })
}

impl BnnClassifier {
    pub fn from_layers(layers: Vec<LayerVariational>) -> Result<Self> {
        let mut sizes: Vec<usize> = layers.iter().map(|l| l.fan_in).collect();
        sizes.push(layers.last().map_or(0, |l| l.fan_out));
        validate_sizes(&sizes)?;
        for pair in layers.windows(2) {
            if pair[0].fan_out != pair[1].fan_in {
                return Err(Error::InvalidLayerSizes(sizes));
            }
        }
        for layer in &layers {
            layer.check()?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[LayerVariational] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerVariational] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.layers.iter().map(|l| l.fan_in).collect();
        sizes.push(self.layers[self.layers.len() - 1].fan_out);
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerVariational::param_count).sum()
    }

    /// All means in canonical order: per layer, weights row-major then biases.
    pub fn means(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight_mean.iter().chain(&l.bias_mean).copied())
            .collect()
    }

    /// All rhos in the same order as [`means`](Self::means).
    pub fn rhos(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight_rho.iter().chain(&l.bias_rho).copied())
            .collect()
    }

    pub fn stddevs(&self) -> Vec<f64> {
        self.rhos().into_iter().map(softplus).collect()
    }

    pub fn set_means(&mut self, means: &[f64]) {
        assert_eq!(means.len(), self.param_count());
        let mut it = means.iter().copied();
        for l in &mut self.layers {
            for v in l.weight_mean.iter_mut().chain(l.bias_mean.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
    }

    pub fn set_rhos(&mut self, rhos: &[f64]) {
        assert_eq!(rhos.len(), self.param_count());
        let mut it = rhos.iter().copied();
        for l in &mut self.layers {
            for v in l.weight_rho.iter_mut().chain(l.bias_rho.iter_mut()) {
                *v = it.next().unwrap();
            }
        }
    }

    /// The variational posterior over the flattened parameter vector.
    pub fn posterior(&self) -> DiagonalGaussian {
        DiagonalGaussian::new(self.means(), self.stddevs())
            .expect("softplus keeps stddev positive")
    }

    pub fn prior(&self) -> DiagonalGaussian {
        let n = self.param_count();
        DiagonalGaussian::new(vec![PRIOR_MEAN; n], vec![PRIOR_STDDEV; n])
            .expect("prior is valid")
    }

    /// Concrete network `w = mean + softplus(rho) * eps`.
    pub fn realize(&self, eps: &[f64]) -> Result<Realization> {
        if eps.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter noise",
                expected: self.param_count(),
                actual: eps.len(),
            });
        }
        let mut offset = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let nw = l.fan_in * l.fan_out;
                let ew = &eps[offset..offset + nw];
                let eb = &eps[offset + nw..offset + nw + l.fan_out];
                offset += nw + l.fan_out;
                let perturb = |m: &[f64], r: &[f64], e: &[f64]| -> Vec<f64> {
                    m.iter()
                        .zip(r)
                        .zip(e)
                        .map(|((m, r), e)| m + softplus(*r) * e)
                        .collect()
                };
                ConcreteLayer {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    weights: perturb(&l.weight_mean, &l.weight_rho, ew),
                    biases: perturb(&l.bias_mean, &l.bias_rho, eb),
                }
            })
            .collect();
        Ok(Realization { layers })
    }

    /// The deterministic network at the variational means.
    pub fn mean_network(&self) -> Realization {
        self.realize(&vec![0.0; self.param_count()])
            .expect("noise length matches")
    }

    /// One posterior draw using every normal from `rng` in parameter order.
    pub fn draw(&self, rng: &mut RandomSource) -> Realization {
        let mut eps = vec![0.0; self.param_count()];
        rng.fill_standard_normal(&mut eps);
        self.realize(&eps).expect("noise length matches")
    }
}

/// Prediction score for `x` under the network `mean + softplus(rho) * eps`.
pub fn forward_sampled(model: &BnnClassifier, x: &[f64], eps: &[f64]) -> Result<f64> {
    model.realize(eps)?.predict(x)
}

/// `count` independent posterior networks; draw `s` uses child stream `s`
/// of `rng`.
pub fn sample_posterior(model: &BnnClassifier, count: usize, rng: &RandomSource) -> Vec<Realization> {
    (0..count as u64)
        .map(|s| model.draw(&mut rng.child(s)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConcreteLayer {
    /// `out_j = sum_i input_i * w_ij + b_j`
    pub fn affine_into(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.biases);
        for (i, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o += a * w;
            }
        }
    }
}

/// A single concrete network drawn from the variational posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub layers: Vec<ConcreteLayer>,
}

impl Realization {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "input features",
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.fan_out];
            layer.affine_into(&current, &mut next);
            if k < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            current = next;
        }
        sigmoid(current[0])
    }
}

/// Posterior means and standard deviations of one layer, shaped like the
/// layer (`fan_in x fan_out` row-major for weights).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_mean: Vec<f64>,
    pub weight_stddev: Vec<f64>,
    pub bias_mean: Vec<f64>,
    pub bias_stddev: Vec<f64>,
}

pub fn weight_summary(model: &BnnClassifier) -> Vec<LayerSummary> {
    model
        .layers
        .iter()
        .map(|l| LayerSummary {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            weight_mean: l.weight_mean.clone(),
            weight_stddev: l.weight_rho.iter().copied().map(softplus).collect(),
            bias_mean: l.bias_mean.clone(),
            bias_stddev: l.bias_rho.iter().copied().map(softplus).collect(),
        })
        .collect()
}

/// Long-format heatmap table: `layer,input,unit,mean,stddev`. Bias rows use
/// `input = bias`.
pub fn weight_summary_csv(summary: &[LayerSummary]) -> String {
    let mut out = String::from("layer,input,unit,mean,stddev\n");
    for (k, l) in summary.iter().enumerate() {
        for i in 0..l.fan_in {
            for j in 0..l.fan_out {
                let idx = i * l.fan_out + j;
                out.push_str(&format!(
                    "{k},{i},{j},{},{}\n",
                    l.weight_mean[idx], l.weight_stddev[idx]
                ));
            }
        }
        for j in 0..l.fan_out {
            out.push_str(&format!("{k},bias,{j},{},{}\n", l.bias_mean[j], l.bias_stddev[j]));
        }
    }
    out
}

/// Histogram of variational means for one parameter group (`w0`, `b0`, ...)
/// with the prior density evaluated at each bin center.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityGroup {
    pub name: String,
    pub bin_centers: Vec<f64>,
    pub bin_width: f64,
    pub counts: Vec<usize>,
    /// Counts normalized to integrate to one.
    pub density: Vec<f64>,
    pub prior_density: Vec<f64>,
}

impl DensityGroup {
    /// Count-weighted average of bin centers.
    pub fn center_of_mass(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        self.bin_centers
            .iter()
            .zip(&self.counts)
            .map(|(c, &n)| c * n as f64)
            .sum::<f64>()
            / total as f64
    }
}

/// Histograms over `[min(lo, -3), max(hi, 3)]`, so the prior's bulk is
/// always covered.
pub fn prior_posterior_density(model: &BnnClassifier, bins: usize) -> Result<Vec<DensityGroup>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins must be >= 2, got {bins}")));
    }
    let mut groups = Vec::with_capacity(2 * model.layers.len());
    for (k, l) in model.layers.iter().enumerate() {
        groups.push(histogram_group(format!("w{k}"), &l.weight_mean, bins));
        groups.push(histogram_group(format!("b{k}"), &l.bias_mean, bins));
    }
    Ok(groups)
}

fn histogram_group(name: String, values: &[f64], bins: usize) -> DensityGroup {
    let span = 3.0 * PRIOR_STDDEV;
    let lo = values.iter().copied().fold(PRIOR_MEAN - span, f64::min);
    let hi = values.iter().copied().fold(PRIOR_MEAN + span, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let bin_centers: Vec<f64> = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    let n = values.len() as f64;
    DensityGroup {
        name,
        density: counts.iter().map(|&c| c as f64 / (n * width)).collect(),
        prior_density: bin_centers
            .iter()
            .map(|&c| normal_density(c, PRIOR_MEAN, PRIOR_STDDEV))
            .collect(),
        bin_centers,
        bin_width: width,
        counts,
    }
}

/// `group,bin_center,count,density,prior_density`
pub fn density_csv(groups: &[DensityGroup]) -> String {
    let mut out = String::from("group,bin_center,count,density,prior_density\n");
    for g in groups {
        for b in 0..g.counts.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                g.name, g.bin_centers[b], g.counts[b], g.density[b], g.prior_density[b]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_model(sizes: &[usize]) -> BnnClassifier {
        let mut m = init_model(sizes, 0).unwrap();
        let n = m.param_count();
        m.set_means(&vec![0.0; n]);
        m
    }

    #[test]
    fn default_parameter_count() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 1).unwrap();
        assert_eq!(m.param_count(), 121);
        assert_eq!(m.means().len(), 121);
        assert_eq!(m.rhos().len(), 121);
        assert_eq!(m.layer_sizes(), vec![8, 12, 1]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&DEFAULT_LAYER_SIZES, 99).unwrap();
        let b = init_model(&DEFAULT_LAYER_SIZES, 99).unwrap();
        assert_eq!(a, b);
        let c = init_model(&DEFAULT_LAYER_SIZES, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(init_model(&[8], 0), Err(Error::InvalidLayerSizes(_))));
        assert!(init_model(&[8, 0, 1], 0).is_err());
        assert!(init_model(&[8, 12, 2], 0).is_err());
    }

    #[test]
    fn init_stddev_is_005() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 3).unwrap();
        for s in m.stddevs() {
            assert!((s - 0.05).abs() < 1e-12);
        }
        let rho = m.rhos()[0];
        assert!((rho + 2.97).abs() < 0.01);
    }

    #[test]
    fn zero_network_scores_one_half() {
        let m = zero_model(&DEFAULT_LAYER_SIZES);
        let eps = vec![0.0; m.param_count()];
        let x = [0.3, -1.0, 2.0, 0.0, 1.0, -0.5, 0.2, 0.9];
        assert_eq!(forward_sampled(&m, &x, &eps).unwrap(), 0.5);
    }

    #[test]
    fn zero_noise_is_mean_network() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 1.0, -0.5, 0.2, 0.9];
        let eps = vec![0.0; m.param_count()];
        assert_eq!(
            forward_sampled(&m, &x, &eps).unwrap(),
            m.mean_network().predict(&x).unwrap()
        );
    }

    #[test]
    fn forward_checks_dimensions() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let eps = vec![0.0; m.param_count()];
        assert!(forward_sampled(&m, &[0.0; 7], &eps).is_err());
        assert!(forward_sampled(&m, &[0.0; 8], &eps[1..]).is_err());
    }

    #[test]
    fn forward_matches_hand_computation() {
        // 2 -> 2 -> 1 with known weights, tiny sigma and fixed eps.
        let rho = inverse_softplus(0.5);
        let l0 = LayerVariational {
            fan_in: 2,
            fan_out: 2,
            weight_mean: vec![1.0, -1.0, 2.0, 0.5],
            weight_rho: vec![rho; 4],
            bias_mean: vec![0.1, -0.2],
            bias_rho: vec![rho; 2],
        };
        let l1 = LayerVariational {
            fan_in: 2,
            fan_out: 1,
            weight_mean: vec![0.7, -0.3],
            weight_rho: vec![rho; 2],
            bias_mean: vec![0.05],
            bias_rho: vec![rho],
        };
        let m = BnnClassifier::from_layers(vec![l0, l1]).unwrap();
        let eps = [0.2, 0.0, -0.4, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0];
        let x = [0.5, 1.5];
        // w0 = [[1.1, -1.0], [1.8, 0.5]], b0 = [0.1, 0.3]
        let h0 = relu(0.5 * 1.1 + 1.5 * 1.8 + 0.1);
        let h1 = relu(0.5 * -1.0 + 1.5 * 0.5 + 0.3);
        let z = 0.7 * h0 - 0.3 * h1 + 0.05 - 0.5;
        let expected = sigmoid(z);
        assert!((forward_sampled(&m, &x, &eps).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn scores_stay_inside_unit_interval() {
        let mut m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let big: Vec<f64> = m.means().iter().map(|v| v * 1e4).collect();
        m.set_means(&big);
        let mut rng = RandomSource::new(1, 0);
        for _ in 0..200 {
            let r = m.draw(&mut rng);
            let x: Vec<f64> = (0..8).map(|_| 10.0 * rng.standard_normal()).collect();
            let p = r.predict(&x).unwrap();
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn sample_posterior_zero_noise() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let r = m.realize(&vec![0.0; m.param_count()]).unwrap();
        assert_eq!(r, m.mean_network());
    }

    #[test]
    fn sample_posterior_is_deterministic() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let rng = RandomSource::new(17, 3);
        assert_eq!(sample_posterior(&m, 4, &rng), sample_posterior(&m, 4, &rng));
        assert_eq!(sample_posterior(&m, 1000, &rng).len(), 1000);
    }

    #[test]
    fn sample_posterior_stddev_matches_softplus_rho() {
        let mut m = init_model(&[2, 2, 1], 5).unwrap();
        let rhos: Vec<f64> = (0..m.param_count()).map(|i| -1.0 + 0.2 * i as f64).collect();
        m.set_rhos(&rhos);
        let n = 100_000;
        let draws = sample_posterior(&m, n, &RandomSource::new(4, 0));
        let flat = |r: &Realization| -> Vec<f64> {
            r.layers
                .iter()
                .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
                .collect()
        };
        let values: Vec<Vec<f64>> = draws.iter().map(flat).collect();
        for (p, sigma) in m.stddevs().into_iter().enumerate() {
            let mean = values.iter().map(|v| v[p]).sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v[p] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = sigma / (2.0 * (n as f64 - 1.0)).sqrt();
            assert!((var.sqrt() - sigma).abs() < 3.0 * se, "param {p}");
        }
    }

    #[test]
    fn weight_summary_shapes() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        let s = weight_summary(&m);
        assert_eq!((s[0].fan_in, s[0].fan_out), (8, 12));
        assert_eq!((s[1].fan_in, s[1].fan_out), (12, 1));
        assert_eq!(s[0].weight_stddev.len(), 96);
        assert!(s.iter().all(|l| l.weight_stddev.iter().all(|v| (v - 0.05).abs() < 1e-12)));
        let csv = weight_summary_csv(&s);
        assert_eq!(csv.lines().count(), 1 + 121);
    }

    #[test]
    fn density_histograms() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 5).unwrap();
        assert!(prior_posterior_density(&m, 1).is_err());
        let groups = prior_posterior_density(&m, 30).unwrap();
        let names: Vec<&str> = groups.iter().map(|g| g.name.as_str()).collect();
        assert_eq!(names, ["w0", "b0", "w1", "b1"]);
        let expected = [96, 12, 12, 1];
        for (g, n) in groups.iter().zip(expected) {
            assert_eq!(g.counts.iter().sum::<usize>(), n);
            assert!(g.center_of_mass().abs() < 0.25);
            let mass: f64 = g.density.iter().sum::<f64>() * g.bin_width;
            assert!((mass - 1.0).abs() < 1e-12);
        }
        // prior peak sits at the middle of [-3, 3]
        let w0 = &groups[0];
        let peak = w0
            .prior_density
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        assert!((peak - normal_density(0.1, 0.0, 1.0)).abs() < 1e-2);
        // untrained means concentrate in the central bins
        let central: usize = w0
            .bin_centers
            .iter()
            .zip(&w0.counts)
            .filter(|(c, _)| c.abs() < 0.5)
            .map(|(_, n)| n)
            .sum();
        assert_eq!(central, 96);
        assert_eq!(density_csv(&groups).lines().count(), 1 + 4 * 30);
    }
}
