//! Adam on the negative ELBO with an exponentially decaying learning rate.

use serde::Serialize;

use crate::data::LabeledTable;
use crate::elbo::elbo_gradient;
use crate::error::{Error, Result};
use crate::model::BnnClassifier;
use crate::random::RandomSource;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Random stream reserved for training noise and minibatch shuffling.
const TRAIN_STREAM: u64 = 0x7472_6169_6e;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Rows(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_learning_rate: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub elbo_mc_samples: usize,
    /// KL weight per step; `None` means `1 / batches_per_epoch`.
    pub kl_scale: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_learning_rate: 0.5,
            decay_rate: 0.99,
            epochs: 300,
            batch_size: BatchSize::Full,
            elbo_mc_samples: 5,
            kl_scale: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.initial_learning_rate > 0.0 && self.initial_learning_rate.is_finite()) {
            return bad(format!(
                "initial_learning_rate must be > 0, got {}",
                self.initial_learning_rate
            ));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate must be in (0, 1], got {}", self.decay_rate));
        }
        if self.elbo_mc_samples < 1 {
            return bad("elbo_mc_samples must be >= 1".into());
        }
        if self.batch_size == BatchSize::Rows(0) {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(k) = self.kl_scale {
            if !(k >= 0.0 && k.is_finite()) {
                return bad(format!("kl_scale must be >= 0, got {k}"));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.initial_learning_rate * self.decay_rate.powi(epoch as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of the per-batch ELBO estimates.
    pub elbo: f64,
    pub likelihood: f64,
    pub kl: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    /// `epoch,elbo,ll,kl,lr`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,elbo,ll,kl,lr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.elbo, r.likelihood, r.kl, r.learning_rate
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: BnnClassifier,
    pub history: TrainHistory,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Ascent step on `params` along `grad` (the ELBO gradient), i.e. descent
    /// on the negative ELBO.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = -grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
    }
}

/// Fits the variational parameters by maximizing the ELBO.
///
/// Epoch `e` uses child stream `e` of the training stream; within it, child 0
/// shuffles minibatches and child `b + 1` supplies the noise for batch `b`.
pub fn train(model: &BnnClassifier, train_set: &LabeledTable, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            history: TrainHistory::default(),
        });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let n_rows = train_set.n_rows();
    let batch_rows = match config.batch_size {
        BatchSize::Full => n_rows,
        BatchSize::Rows(b) => b.min(n_rows),
    };
    let n_batches = n_rows.div_ceil(batch_rows);
    let kl_scale = config.kl_scale.unwrap_or(1.0 / n_batches as f64);

    let mut model = model.clone();
    let n = model.param_count();
    let mut adam_mean = Adam::new(n);
    let mut adam_rho = Adam::new(n);
    let root = RandomSource::new(config.seed, TRAIN_STREAM);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        let epoch_rng = root.child(epoch as u64);
        let order: Vec<usize> = if n_batches == 1 {
            (0..n_rows).collect()
        } else {
            epoch_rng.child(0).permutation(n_rows)
        };

        let mut record = EpochRecord {
            epoch,
            elbo: 0.0,
            likelihood: 0.0,
            kl: 0.0,
            learning_rate: lr,
        };
        for (b, rows) in order.chunks(batch_rows).enumerate() {
            let selected;
            let batch = if n_batches == 1 {
                train_set
            } else {
                selected = train_set.select(rows);
                &selected
            };
            let step = elbo_gradient(
                &model,
                batch,
                &epoch_rng.child(b as u64 + 1),
                config.elbo_mc_samples,
                kl_scale,
            )?;
            let est = step.estimate;
            if !est.likelihood_term.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, term: "likelihood" });
            }
            if !est.kl_term.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, term: "kl" });
            }
            if !est.elbo.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, term: "elbo" });
            }
            if !step.gradient.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, term: "gradient" });
            }
            record.elbo += est.elbo;
            record.likelihood += est.likelihood_term;
            record.kl += est.kl_term / n_batches as f64;

            let mut means = model.means();
            let mut rhos = model.rhos();
            adam_mean.step(&mut means, &step.gradient.mean, lr);
            adam_rho.step(&mut rhos, &step.gradient.rho, lr);
            model.set_means(&means);
            model.set_rhos(&rhos);
        }
        history.records.push(record);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn toy() -> LabeledTable {
        let mut rng = RandomSource::new(21, 0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..60 {
            let a = rng.uniform(-2.0, 2.0);
            let b = rng.uniform(-2.0, 2.0);
            features.extend([a, b]);
            labels.push(u8::from(a + b > 0.0));
        }
        LabeledTable::new(vec!["a".into(), "b".into()], features, labels).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let m = init_model(&[2, 4, 1], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&m, &toy(), &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.records.is_empty());
    }

    #[test]
    fn history_has_one_record_per_epoch_and_decays() {
        let m = init_model(&[2, 4, 1], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 7,
            batch_size: BatchSize::Rows(16),
            ..TrainConfig::default()
        };
        let out = train(&m, &toy(), &cfg).unwrap();
        assert_eq!(out.history.records.len(), 7);
        for (e, r) in out.history.records.iter().enumerate() {
            assert_eq!(r.epoch, e);
            assert!((r.learning_rate - 0.5 * 0.99f64.powi(e as i32)).abs() < 1e-15);
            assert!(r.elbo <= r.likelihood);
        }
        assert_eq!(out.history.to_csv().lines().count(), 8);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = init_model(&[2, 4, 1], 1).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            seed: 5,
            batch_size: BatchSize::Rows(25),
            ..TrainConfig::default()
        };
        let a = train(&m, &toy(), &cfg).unwrap();
        let b = train(&m, &toy(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        let c = train(&m, &toy(), &TrainConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn invalid_configs() {
        let m = init_model(&[2, 4, 1], 1).unwrap();
        let t = toy();
        for cfg in [
            TrainConfig { initial_learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { decay_rate: 1.5, ..TrainConfig::default() },
            TrainConfig { decay_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { elbo_mc_samples: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: BatchSize::Rows(0), ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&m, &t, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch() {
        let m = init_model(&[2, 4, 1], 1).unwrap();
        let t = toy();
        let cfg = TrainConfig {
            epochs: 3,
            kl_scale: Some(f64::MAX),
            initial_learning_rate: 1e300,
            ..TrainConfig::default()
        };
        match train(&m, &t, &cfg) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }
}
