//! Posterior predictive evaluation: score distributions, F1-optimal
//! threshold, confusion counts, per-class report and uncertainty histogram.

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{LabeledTable, ARRESTED, PROPAGATED};
use crate::error::{Error, Result};
use crate::model::{BnnClassifier, Realization};
use crate::random::RandomSource;

pub const DEFAULT_POSTERIOR_SAMPLES: usize = 1000;

/// `S x N` prediction scores, one row per posterior draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionDistribution {
    pub n_samples: usize,
    pub n_examples: usize,
    pub scores: Vec<f64>,
    pub mean_score: Vec<f64>,
    /// Sample standard deviation over draws (1/(S-1)).
    pub std_score: Vec<f64>,
}

impl PredictionDistribution {
    pub fn from_scores(n_samples: usize, n_examples: usize, scores: Vec<f64>) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::InvalidConfig(format!(
                "at least 2 posterior samples are needed, got {n_samples}"
            )));
        }
        if scores.len() != n_samples * n_examples {
            return Err(Error::DimensionMismatch {
                context: "score matrix",
                expected: n_samples * n_examples,
                actual: scores.len(),
            });
        }
        let mut mean_score = vec![0.0; n_examples];
        for row in scores.chunks_exact(n_examples.max(1)).take(n_samples) {
            for (m, s) in mean_score.iter_mut().zip(row) {
                *m += s;
            }
        }
        mean_score.iter_mut().for_each(|m| *m /= n_samples as f64);
        let mut std_score = vec![0.0; n_examples];
        for row in scores.chunks_exact(n_examples.max(1)).take(n_samples) {
            for ((v, s), m) in std_score.iter_mut().zip(row).zip(&mean_score) {
                *v += (s - m) * (s - m);
            }
        }
        std_score
            .iter_mut()
            .for_each(|v| *v = (*v / (n_samples - 1) as f64).sqrt());
        Ok(Self {
            n_samples,
            n_examples,
            scores,
            mean_score,
            std_score,
        })
    }

    pub fn sample_row(&self, s: usize) -> &[f64] {
        &self.scores[s * self.n_examples..(s + 1) * self.n_examples]
    }
}

/// Scores of every example under each of the given networks.
pub fn predict_with_realizations(nets: &[Realization], x: &LabeledTable) -> Result<PredictionDistribution> {
    if let Some(net) = nets.first() {
        if net.input_dim() != x.n_features() {
            return Err(Error::DimensionMismatch {
                context: "model inputs vs feature columns",
                expected: net.input_dim(),
                actual: x.n_features(),
            });
        }
    }
    let scores: Vec<f64> = nets
        .par_iter()
        .map(|net| x.rows().map(|r| net.predict_unchecked(r)).collect::<Vec<f64>>())
        .collect::<Vec<_>>()
        .concat();
    PredictionDistribution::from_scores(nets.len(), x.n_rows(), scores)
}

/// Posterior predictive scores for `samples` draws; draw `s` uses child
/// stream `s` of `rng`.
pub fn predict_distribution(
    model: &BnnClassifier,
    x: &LabeledTable,
    samples: usize,
    rng: &RandomSource,
) -> Result<PredictionDistribution> {
    if samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "at least 2 posterior samples are needed, got {samples}"
        )));
    }
    if model.input_dim() != x.n_features() {
        return Err(Error::DimensionMismatch {
            context: "model inputs vs feature columns",
            expected: model.input_dim(),
            actual: x.n_features(),
        });
    }
    let nets: Vec<Realization> = (0..samples as u64)
        .into_par_iter()
        .map(|s| model.draw(&mut rng.child(s)))
        .collect();
    predict_with_realizations(&nets, x)
}

/// F1 of the positive class from counts; 0 when there are no true positives.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// F1 of the propagated class when `score >= threshold` predicts propagation.
pub fn f1_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == PROPAGATED) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_from_counts(tp, fp, fn_)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// Threshold maximizing the propagated-class F1 under `score >= threshold`.
///
/// Candidates are 0, 1 and the midpoints between consecutive distinct sorted
/// scores; ties go to the smallest candidate.
pub fn optimal_threshold(mean_scores: &[f64], labels: &[u8]) -> Result<ThresholdChoice> {
    if mean_scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "scores vs labels",
            expected: labels.len(),
            actual: mean_scores.len(),
        });
    }
    let positives = labels.iter().filter(|&&y| y == PROPAGATED).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| mean_scores[a].total_cmp(&mean_scores[b]));

    // Sweep ascending thresholds; below index `k` everything is predicted
    // arrested, from `k` on predicted propagated.
    let mut best = ThresholdChoice {
        threshold: 0.0,
        f1: f1_from_counts(positives, labels.len() - positives, 0),
    };
    let (mut tp, mut fp) = (positives, labels.len() - positives);
    let mut k = 0;
    while k < order.len() {
        let value = mean_scores[order[k]];
        while k < order.len() && mean_scores[order[k]] == value {
            if labels[order[k]] == PROPAGATED {
                tp -= 1;
            } else {
                fp -= 1;
            }
            k += 1;
        }
        let threshold = if k < order.len() {
            0.5 * (value + mean_scores[order[k]])
        } else if value < 1.0 {
            1.0
        } else {
            break;
        };
        let f1 = f1_from_counts(tp, fp, positives - tp);
        if f1 > best.f1 {
            best = ThresholdChoice { threshold, f1 };
        }
    }
    Ok(best)
}

/// 1 (propagated) iff `mean_score >= threshold`.
pub fn classify(dist: &PredictionDistribution, threshold: f64) -> Vec<u8> {
    classify_scores(&dist.mean_score, threshold)
}

pub fn classify_scores(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub correct_arrested: usize,
    /// Actually arrested, predicted propagated.
    pub arrested_as_propagated: usize,
    /// Actually propagated, predicted arrested.
    pub propagated_as_arrested: usize,
    pub correct_propagated: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.correct_arrested
            + self.arrested_as_propagated
            + self.propagated_as_arrested
            + self.correct_propagated
    }
}

pub fn confusion_matrix(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            context: "predictions vs labels",
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let mut cm = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (t, p) {
            (ARRESTED, ARRESTED) => cm.correct_arrested += 1,
            (ARRESTED, _) => cm.arrested_as_propagated += 1,
            (_, ARRESTED) => cm.propagated_as_arrested += 1,
            _ => cm.correct_propagated += 1,
        }
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerClass {
    pub arrested: ClassMetrics,
    pub propagated: ClassMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub per_class: PerClass,
    /// Support-weighted averages; `support` is the total count.
    pub weighted_average: ClassMetrics,
    pub warnings: Vec<String>,
}

fn ratio(num: usize, den: usize, what: &str, class: &str, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        warnings.push(format!("{what} of class {class} is undefined (zero denominator); reported as 0"));
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(correct: usize, predicted: usize, actual: usize, class: &str, warnings: &mut Vec<String>) -> ClassMetrics {
    let precision = ratio(correct, predicted, "precision", class, warnings);
    let recall = ratio(correct, actual, "recall", class, warnings);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: actual,
    }
}

pub fn classification_report(cm: &ConfusionCounts) -> ClassificationReport {
    let mut warnings = Vec::new();
    let arrested = class_metrics(
        cm.correct_arrested,
        cm.correct_arrested + cm.propagated_as_arrested,
        cm.correct_arrested + cm.arrested_as_propagated,
        "arrested",
        &mut warnings,
    );
    let propagated = class_metrics(
        cm.correct_propagated,
        cm.correct_propagated + cm.arrested_as_propagated,
        cm.correct_propagated + cm.propagated_as_arrested,
        "propagated",
        &mut warnings,
    );
    let total = cm.total();
    let weight = |f: fn(&ClassMetrics) -> f64| -> f64 {
        if total == 0 {
            0.0
        } else {
            (f(&arrested) * arrested.support as f64 + f(&propagated) * propagated.support as f64)
                / total as f64
        }
    };
    let weighted_average = ClassMetrics {
        precision: weight(|m| m.precision),
        recall: weight(|m| m.recall),
        f1: weight(|m| m.f1),
        support: total,
    };
    ClassificationReport {
        per_class: PerClass { arrested, propagated },
        weighted_average,
        warnings,
    }
}

/// Support-weighted F1 of `score >= threshold` predictions.
pub fn weighted_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    let cm = confusion_matrix(&classify_scores(scores, threshold), labels)?;
    Ok(classification_report(&cm).weighted_average.f1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
    /// Average `std_score` of the bin's examples; `None` for empty bins.
    pub mean_std: Option<f64>,
}

/// Equal-width bins over `[0, 1]` on the mean score.
pub fn uncertainty_histogram(dist: &PredictionDistribution, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bins must be >= 2, got {bins}")));
    }
    let mut counts = vec![0usize; bins];
    let mut sums = vec![0.0; bins];
    for (&m, &s) in dist.mean_score.iter().zip(&dist.std_score) {
        let idx = ((m * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1;
        sums[idx] += s;
    }
    Ok((0..bins)
        .map(|b| HistogramBin {
            center: (b as f64 + 0.5) / bins as f64,
            count: counts[b],
            mean_std: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
        })
        .collect())
}

/// `bin_center,count,mean_std`; empty bins leave `mean_std` blank.
pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_center,count,mean_std\n");
    for b in bins {
        let std = b.mean_std.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", b.center, b.count, std));
    }
    out
}

/// Average `std_score` over examples whose mean score satisfies `pick`.
pub fn mean_std_where(dist: &PredictionDistribution, pick: impl Fn(f64) -> bool) -> Option<f64> {
    let (sum, n) = dist
        .mean_score
        .iter()
        .zip(&dist.std_score)
        .filter(|(m, _)| pick(**m))
        .fold((0.0, 0usize), |(s, n), (_, sd)| (s + sd, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_feature_names;
    use crate::model::{init_model, DEFAULT_LAYER_SIZES};
    use proptest::prelude::*;

    const REFERENCE_COUNTS: ConfusionCounts = ConfusionCounts {
        correct_arrested: 226,
        arrested_as_propagated: 46,
        propagated_as_arrested: 22,
        correct_propagated: 106,
    };

    fn features(n: usize, seed: u64) -> LabeledTable {
        let mut rng = RandomSource::new(seed, 0);
        let f: Vec<f64> = (0..n * 8).map(|_| rng.standard_normal()).collect();
        let labels = (0..n).map(|i| (i % 2) as u8).collect();
        LabeledTable::new(default_feature_names(), f, labels).unwrap()
    }

    #[test]
    fn zero_noise_draws_have_zero_std() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 2).unwrap();
        let nets = vec![m.mean_network(), m.mean_network()];
        let d = predict_with_realizations(&nets, &features(10, 1)).unwrap();
        assert!(d.std_score.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn predict_distribution_basics() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 2).unwrap();
        let x = features(25, 1);
        let rng = RandomSource::new(5, 9);
        let d = predict_distribution(&m, &x, 50, &rng).unwrap();
        assert_eq!((d.n_samples, d.n_examples), (50, 25));
        assert!(d.mean_score.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(d.scores.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(d, predict_distribution(&m, &x, 50, &rng).unwrap());
        assert!(predict_distribution(&m, &x, 1, &rng).is_err());

        let seven = LabeledTable::new(
            (0..7).map(|i| format!("f{i}")).collect(),
            vec![0.0; 14],
            vec![0, 1],
        )
        .unwrap();
        assert!(matches!(
            predict_distribution(&m, &seven, 10, &rng),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn std_is_stable_across_seeds() {
        let mut m = init_model(&DEFAULT_LAYER_SIZES, 2).unwrap();
        let rhos: Vec<f64> = m.rhos().iter().map(|_| -0.5).collect();
        m.set_rhos(&rhos);
        let x = features(3, 4);
        let s = 10_000;
        let a = predict_distribution(&m, &x, s, &RandomSource::new(1, 0)).unwrap();
        let b = predict_distribution(&m, &x, s, &RandomSource::new(2, 0)).unwrap();
        for i in 0..3 {
            // standard error of a sample std via the delta method on the
            // empirical fourth central moment
            let se = |d: &PredictionDistribution| {
                let m4 = (0..s)
                    .map(|k| (d.sample_row(k)[i] - d.mean_score[i]).powi(4))
                    .sum::<f64>()
                    / s as f64;
                let var = d.std_score[i].powi(2);
                ((m4 - var * var) / s as f64).sqrt() / (2.0 * d.std_score[i])
            };
            let combined = (se(&a).powi(2) + se(&b).powi(2)).sqrt();
            assert!((a.std_score[i] - b.std_score[i]).abs() < 3.0 * combined);
        }
    }

    #[test]
    fn std_invariant_under_sample_permutation() {
        let m = init_model(&DEFAULT_LAYER_SIZES, 2).unwrap();
        let x = features(6, 4);
        let d = predict_distribution(&m, &x, 20, &RandomSource::new(1, 0)).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..20).map(|s| d.sample_row(s).to_vec()).collect();
        rows.reverse();
        rows.swap(3, 11);
        let p = PredictionDistribution::from_scores(20, 6, rows.concat()).unwrap();
        for (a, b) in p.std_score.iter().zip(&d.std_score) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_threshold_is_midpoint() {
        let t = optimal_threshold(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(t.threshold, 0.5);
        assert_eq!(t.f1, 1.0);
    }

    #[test]
    fn threshold_needs_both_classes() {
        assert!(matches!(optimal_threshold(&[0.1, 0.9], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn threshold_ties_and_edges() {
        // Everything predicted propagated is optimal -> threshold 0.
        let t = optimal_threshold(&[0.3, 0.3, 0.3], &[1, 1, 0]).unwrap();
        assert_eq!(t.threshold, 0.0);
        assert!((t.f1 - 0.8).abs() < 1e-12);
        // Inverted scores: best is still "all propagated".
        let t = optimal_threshold(&[0.9, 0.1], &[0, 1]).unwrap();
        assert_eq!(t.threshold, 0.0);
    }

    #[test]
    fn classify_boundaries() {
        let scores = [0.0001, 0.5, 0.9999];
        assert_eq!(classify_scores(&scores, 0.0), vec![1, 1, 1]);
        assert_eq!(classify_scores(&scores, 1.0), vec![0, 0, 0]);
        assert_eq!(classify_scores(&scores, 0.5), vec![0, 1, 1]);
    }

    #[test]
    fn confusion_examples() {
        let t = [0, 1, 1, 0, 1];
        let cm = confusion_matrix(&t, &t).unwrap();
        assert_eq!(cm.arrested_as_propagated + cm.propagated_as_arrested, 0);
        assert_eq!(cm.total(), 5);
        let cm = confusion_matrix(&[1; 4], &[0; 4]).unwrap();
        assert_eq!(cm.arrested_as_propagated, 4);
        assert!(confusion_matrix(&[1, 0], &[1]).is_err());
    }

    #[test]
    fn reference_counts_reproduce_report() {
        let r = classification_report(&REFERENCE_COUNTS);
        let a = r.per_class.arrested;
        let p = r.per_class.propagated;
        for (got, want) in [
            (a.precision, 0.911),
            (a.recall, 0.831),
            (a.f1, 0.869),
            (p.precision, 0.697),
            (p.recall, 0.828),
            (p.f1, 0.757),
        ] {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
        assert_eq!((a.support, p.support), (272, 128));
        assert_eq!(r.weighted_average.support, 400);
        assert!((r.weighted_average.precision - 0.84).abs() < 0.005);
        assert!((r.weighted_average.recall - 0.83).abs() < 0.005);
        assert!((r.weighted_average.f1 - 0.83).abs() < 0.005);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn perfect_and_degenerate_reports() {
        let perfect = classification_report(&ConfusionCounts {
            correct_arrested: 5,
            correct_propagated: 3,
            ..Default::default()
        });
        for m in [perfect.per_class.arrested, perfect.per_class.propagated, perfect.weighted_average] {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
        // nothing predicted propagated
        let r = classification_report(&ConfusionCounts {
            correct_arrested: 5,
            propagated_as_arrested: 3,
            ..Default::default()
        });
        assert_eq!(r.per_class.propagated.precision, 0.0);
        assert!(!r.per_class.propagated.f1.is_nan());
        assert!(!r.warnings.is_empty());
    }

    fn dist_from_means(means: &[f64], stds: &[f64]) -> PredictionDistribution {
        PredictionDistribution {
            n_samples: 2,
            n_examples: means.len(),
            scores: vec![],
            mean_score: means.to_vec(),
            std_score: stds.to_vec(),
        }
    }

    #[test]
    fn histogram_examples() {
        let d = dist_from_means(&[0.5; 7], &[0.1; 7]);
        let h = uncertainty_histogram(&d, 10).unwrap();
        let nonzero: Vec<&HistogramBin> = h.iter().filter(|b| b.count > 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].center - 0.55).abs() < 1e-12);
        assert!(h.iter().filter(|b| b.count == 0).all(|b| b.mean_std.is_none()));
        assert!(uncertainty_histogram(&d, 1).is_err());

        let d = dist_from_means(&[0.0, 0.05, 0.999, 1.0 - 1e-17, 0.33], &[0.0, 0.2, 0.1, 0.3, 0.4]);
        let h = uncertainty_histogram(&d, 4).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[0].count, 2);
        assert!((h[0].mean_std.unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(histogram_csv(&h).lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn threshold_beats_every_grid_point(
            data in prop::collection::vec((0.0..1.0f64, 0u8..2), 2..80)
        ) {
            let (scores, labels): (Vec<f64>, Vec<u8>) = data.into_iter().unzip();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let best = optimal_threshold(&scores, &labels).unwrap();
            prop_assert_eq!(best.f1, f1_at_threshold(&scores, &labels, best.threshold));
            for k in 0..=1000 {
                let t = k as f64 / 1000.0;
                prop_assert!(best.f1 >= f1_at_threshold(&scores, &labels, t));
            }
        }

        #[test]
        fn raising_threshold_never_adds_propagated(
            scores in prop::collection::vec(0.0..1.0f64, 1..50),
            a in 0.0..1.0f64,
            b in 0.0..1.0f64,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let count = |t| classify_scores(&scores, t).iter().filter(|&&y| y == 1).count();
            prop_assert!(count(hi) <= count(lo));
        }

        #[test]
        fn confusion_and_report_conserve_counts(
            pairs in prop::collection::vec((0u8..2, 0u8..2), 1..100)
        ) {
            let (pred, truth): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let cm = confusion_matrix(&pred, &truth).unwrap();
            prop_assert_eq!(cm.total(), pred.len());
            let r = classification_report(&cm);
            prop_assert_eq!(r.per_class.arrested.support + r.per_class.propagated.support, pred.len());
        }
    }
}
