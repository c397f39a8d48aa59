//! Permutation feature importance with per-class uncertainty attribution.
//!
//! Every shuffled evaluation reuses the same posterior draws as the baseline
//! (child stream [`PREDICT_STREAM`] of the caller's source), so differences
//! come from the permutation alone. The permutation for feature `f`, repeat
//! `r` uses stream `PERMUTE_STREAM -> f -> r`.

use serde::Serialize;

use crate::data::{LabeledTable, PROPAGATED};
use crate::error::{Error, Result};
use crate::inference::{classify, predict_with_realizations, weighted_f1, PredictionDistribution};
use crate::model::{sample_posterior, BnnClassifier, Realization};
use crate::random::RandomSource;

pub const DEFAULT_REPEATS: usize = 10;

const PREDICT_STREAM: u64 = 0;
const PERMUTE_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceRow {
    pub feature_name: String,
    pub baseline_f1: f64,
    pub shuffled_f1_mean: f64,
    pub shuffled_f1_std: f64,
    /// `baseline_f1 - shuffled_f1_mean`; negative when shuffling helped.
    pub f1_drop: f64,
    /// Mean `std_score` over examples predicted propagated, averaged across
    /// repeats. `None` when no repeat predicted any propagation.
    pub uncertainty_propagated: Option<f64>,
    pub uncertainty_arrested: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeatureUncertainty {
    pub propagated: Option<f64>,
    pub arrested: Option<f64>,
}

/// Mean per-example uncertainty within each predicted class.
pub fn uncertainty_by_predicted_class(dist: &PredictionDistribution, threshold: f64) -> FeatureUncertainty {
    let pred = classify(dist, threshold);
    let mean_of = |class: u8| {
        let (sum, n) = pred
            .iter()
            .zip(&dist.std_score)
            .filter(|(p, _)| **p == class)
            .fold((0.0, 0usize), |(s, n), (_, sd)| (s + sd, n + 1));
        (n > 0).then(|| sum / n as f64)
    };
    FeatureUncertainty {
        propagated: mean_of(PROPAGATED),
        arrested: mean_of(1 - PROPAGATED),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Permutation {
    Shuffle,
    #[cfg(test)]
    Identity,
}

impl Permutation {
    fn draw(self, n: usize, rng: &mut RandomSource) -> Vec<usize> {
        match self {
            Permutation::Shuffle => rng.permutation(n),
            #[cfg(test)]
            Permutation::Identity => (0..n).collect(),
        }
    }
}

struct ShuffleOutcome {
    f1: f64,
    uncertainty: FeatureUncertainty,
}

fn evaluate_shuffled(
    nets: &[Realization],
    test: &LabeledTable,
    column: usize,
    perm_rng: &mut RandomSource,
    threshold: f64,
    mode: Permutation,
) -> Result<ShuffleOutcome> {
    let perm = mode.draw(test.n_rows(), perm_rng);
    let shuffled = test.with_column_permuted(column, &perm);
    let dist = predict_with_realizations(nets, &shuffled)?;
    Ok(ShuffleOutcome {
        f1: weighted_f1(&dist.mean_score, test.labels(), threshold)?,
        uncertainty: uncertainty_by_predicted_class(&dist, threshold),
    })
}

fn check_model(model: &BnnClassifier, test: &LabeledTable) -> Result<()> {
    if model.input_dim() != test.n_features() {
        return Err(Error::DimensionMismatch {
            context: "model inputs vs feature columns",
            expected: model.input_dim(),
            actual: test.n_features(),
        });
    }
    if test.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// One row per feature, sorted by `f1_drop` descending (stable, so ties keep
/// column order). The threshold is held fixed across all shuffles.
pub fn permutation_importance(
    model: &BnnClassifier,
    test: &LabeledTable,
    threshold: f64,
    samples: usize,
    rng: &RandomSource,
    repeats: usize,
) -> Result<Vec<ImportanceRow>> {
    importance_with(model, test, threshold, samples, rng, repeats, Permutation::Shuffle)
}

pub(crate) fn importance_with(
    model: &BnnClassifier,
    test: &LabeledTable,
    threshold: f64,
    samples: usize,
    rng: &RandomSource,
    repeats: usize,
    mode: Permutation,
) -> Result<Vec<ImportanceRow>> {
    if repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    if samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "at least 2 posterior samples are needed, got {samples}"
        )));
    }
    check_model(model, test)?;
    let nets = sample_posterior(model, samples, &rng.child(PREDICT_STREAM));
    let baseline = predict_with_realizations(&nets, test)?;
    let baseline_f1 = weighted_f1(&baseline.mean_score, test.labels(), threshold)?;
    let permute_root = rng.child(PERMUTE_STREAM);

    let mut rows = Vec::with_capacity(test.n_features());
    for (f, name) in test.feature_names().iter().enumerate() {
        let feature_rng = permute_root.child(f as u64);
        let mut f1s = Vec::with_capacity(repeats);
        let mut unc_prop = Vec::with_capacity(repeats);
        let mut unc_arr = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let out = evaluate_shuffled(
                &nets,
                test,
                f,
                &mut feature_rng.child(r as u64),
                threshold,
                mode,
            )?;
            f1s.push(out.f1);
            unc_prop.push(out.uncertainty.propagated);
            unc_arr.push(out.uncertainty.arrested);
        }
        let (mean, std) = mean_and_std(&f1s);
        rows.push(ImportanceRow {
            feature_name: name.clone(),
            baseline_f1,
            shuffled_f1_mean: mean,
            shuffled_f1_std: std,
            f1_drop: baseline_f1 - mean,
            uncertainty_propagated: mean_present(&unc_prop),
            uncertainty_arrested: mean_present(&unc_arr),
        });
    }
    rows.sort_by(|a, b| b.f1_drop.total_cmp(&a.f1_drop));
    Ok(rows)
}

/// Uncertainty per predicted class after shuffling `feature` once.
pub fn feature_uncertainty(
    model: &BnnClassifier,
    test: &LabeledTable,
    feature: &str,
    threshold: f64,
    samples: usize,
    rng: &RandomSource,
) -> Result<FeatureUncertainty> {
    feature_uncertainty_with(model, test, feature, threshold, samples, rng, Permutation::Shuffle)
}

pub(crate) fn feature_uncertainty_with(
    model: &BnnClassifier,
    test: &LabeledTable,
    feature: &str,
    threshold: f64,
    samples: usize,
    rng: &RandomSource,
    mode: Permutation,
) -> Result<FeatureUncertainty> {
    let column = test.feature_index(feature)?;
    check_model(model, test)?;
    if samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "at least 2 posterior samples are needed, got {samples}"
        )));
    }
    let nets = sample_posterior(model, samples, &rng.child(PREDICT_STREAM));
    let mut perm_rng = rng.child(PERMUTE_STREAM).child(column as u64).child(0);
    Ok(evaluate_shuffled(&nets, test, column, &mut perm_rng, threshold, mode)?.uncertainty)
}

/// `feature,baseline_f1,shuffled_f1_mean,shuffled_f1_std,f1_drop,unc_propagated,unc_arrested`
pub fn importance_csv(rows: &[ImportanceRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "feature,baseline_f1,shuffled_f1_mean,shuffled_f1_std,f1_drop,unc_propagated,unc_arrested\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.feature_name,
            r.baseline_f1,
            r.shuffled_f1_mean,
            r.shuffled_f1_std,
            r.f1_drop,
            opt(r.uncertainty_propagated),
            opt(r.uncertainty_arrested),
        ));
    }
    out
}
