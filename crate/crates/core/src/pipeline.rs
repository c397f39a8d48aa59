//! End-to-end orchestration shared by the CLI and the integration tests:
//! split, standardize, upsample, train, evaluate.
//!
//! Every random step draws from its own stream of the run seed, so a
//! checkpoint's recorded seed is enough to rebuild its test fold.

use serde::Serialize;

use crate::checkpoint::{Checkpoint, SplitRecord};
use crate::data::{fit_standardizer, split, upsample_minority, LabeledTable, Standardizer};
use crate::error::{Error, Result};
use crate::importance::ImportanceRow;
use crate::inference::{
    classification_report, classify, confusion_matrix, f1_at_threshold, optimal_threshold,
    predict_distribution, uncertainty_histogram, ClassMetrics, ConfusionCounts, HistogramBin,
    PerClass, PredictionDistribution,
};
use crate::model::{init_model, BnnClassifier, DEFAULT_LAYER_SIZES};
use crate::random::RandomSource;
use crate::train::{train, TrainConfig, TrainHistory};

pub const SPLIT_STREAM: u64 = 1;
pub const UPSAMPLE_STREAM: u64 = 2;
pub const EVAL_STREAM: u64 = 3;
pub const IMPORTANCE_STREAM: u64 = 4;
pub const TRAIN_SCORE_STREAM: u64 = 5;

pub const DEFAULT_TRAIN_COUNT: usize = 1600;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
const TRAIN_SCORE_SAMPLES: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub seed: u64,
    pub train_count: usize,
    pub upsample: bool,
    pub layer_sizes: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_count: DEFAULT_TRAIN_COUNT,
            upsample: true,
            layer_sizes: DEFAULT_LAYER_SIZES.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    /// Standardized, and upsampled when requested.
    pub train: LabeledTable,
    /// Standardized training fold before upsampling.
    pub train_raw: LabeledTable,
    pub test: LabeledTable,
    pub standardizer: Standardizer,
    pub split: SplitRecord,
}

/// Split, fit the standardizer on the training fold, then upsample it.
pub fn prepare(table: &LabeledTable, seed: u64, train_count: usize, upsample: bool) -> Result<PreparedData> {
    let parts = split(table, train_count, &mut RandomSource::new(seed, SPLIT_STREAM))?;
    let standardizer = fit_standardizer(&parts.train)?;
    let train_raw = standardizer.apply(&parts.train)?;
    let test = standardizer.apply(&parts.test)?;
    let train = if upsample {
        upsample_minority(&train_raw, &mut RandomSource::new(seed, UPSAMPLE_STREAM))?
    } else {
        train_raw.clone()
    };
    Ok(PreparedData {
        train,
        train_raw,
        test,
        standardizer,
        split: SplitRecord { seed, train_count },
    })
}

/// Standardized test fold of `table` for a checkpoint that recorded its split.
pub fn test_fold(table: &LabeledTable, ckpt: &Checkpoint) -> Result<LabeledTable> {
    let record = ckpt.split.ok_or_else(|| {
        Error::InvalidConfig("checkpoint has no split record; pass an explicit test file".into())
    })?;
    let parts = split(table, record.train_count, &mut RandomSource::new(record.seed, SPLIT_STREAM))?;
    standardize_for(ckpt, &parts.test)
}

/// Applies the checkpoint's standardizer after checking the column schema.
pub fn standardize_for(ckpt: &Checkpoint, table: &LabeledTable) -> Result<LabeledTable> {
    if !ckpt.feature_names.is_empty() && ckpt.feature_names != table.feature_names() {
        return Err(Error::SchemaMismatch {
            expected: ckpt.feature_names.clone(),
            actual: table.feature_names().to_vec(),
        });
    }
    match &ckpt.standardizer {
        Some(s) => s.apply(table),
        None => Ok(table.clone()),
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub data: PreparedData,
    /// Propagated-class F1 on the (non-upsampled) training fold at 0.5.
    pub train_f1: f64,
}

pub fn fit(table: &LabeledTable, config: &FitConfig) -> Result<FitOutcome> {
    let data = prepare(table, config.seed, config.train_count, config.upsample)?;
    let init = init_model(&config.layer_sizes, config.seed)?;
    let train_config = TrainConfig {
        seed: config.seed,
        ..config.train.clone()
    };
    let outcome = train(&init, &data.train, &train_config)?;
    let train_f1 = train_set_f1(&outcome.model, &data.train_raw, config.seed)?;
    Ok(FitOutcome {
        checkpoint: Checkpoint {
            model: outcome.model,
            standardizer: Some(data.standardizer.clone()),
            feature_names: table.feature_names().to_vec(),
            split: Some(data.split),
        },
        history: outcome.history,
        data,
        train_f1,
    })
}

fn train_set_f1(model: &BnnClassifier, train: &LabeledTable, seed: u64) -> Result<f64> {
    let dist = predict_distribution(
        model,
        train,
        TRAIN_SCORE_SAMPLES,
        &RandomSource::new(seed, TRAIN_SCORE_STREAM),
    )?;
    Ok(f1_at_threshold(&dist.mean_score, train.labels(), 0.5))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    /// Whether the threshold was optimized on these labels or supplied.
    pub threshold_source: String,
    /// Propagated-class F1 at `threshold`.
    pub f1_at_threshold: f64,
    pub posterior_samples: usize,
    pub n_examples: usize,
    pub confusion: ConfusionCounts,
    pub per_class: PerClass,
    pub weighted_average: ClassMetrics,
    pub histogram: Vec<HistogramBin>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<ImportanceRow>>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub distribution: PredictionDistribution,
}

/// Scores `test` with `samples` posterior draws, picks (or uses) the
/// threshold, and assembles the report.
pub fn evaluate(
    model: &BnnClassifier,
    test: &LabeledTable,
    samples: usize,
    seed: u64,
    threshold: Option<f64>,
    bins: usize,
) -> Result<Evaluation> {
    let dist = predict_distribution(model, test, samples, &RandomSource::new(seed, EVAL_STREAM))?;
    let mut warnings = Vec::new();
    if samples < 30 {
        warnings.push(format!(
            "only {samples} posterior samples; uncertainty estimates are unreliable"
        ));
    }
    let (threshold, source) = match threshold {
        Some(t) => (t, "fixed"),
        None => (optimal_threshold(&dist.mean_score, test.labels())?.threshold, "optimized_on_labels"),
    };
    let cm = confusion_matrix(&classify(&dist, threshold), test.labels())?;
    let report = classification_report(&cm);
    warnings.extend(report.warnings);
    Ok(Evaluation {
        report: EvalReport {
            threshold,
            threshold_source: source.to_string(),
            f1_at_threshold: f1_at_threshold(&dist.mean_score, test.labels(), threshold),
            posterior_samples: samples,
            n_examples: test.n_rows(),
            confusion: cm,
            per_class: report.per_class,
            weighted_average: report.weighted_average,
            histogram: uncertainty_histogram(&dist, bins)?,
            importance: None,
            warnings,
        },
        distribution: dist,
    })
}
