//! Tabular data: the labeled feature table, CSV I/O, standardization,
//! resampling and the synthetic rupture generator.

mod csv_io;
mod resample;
mod standardize;
mod synthetic;

pub use csv_io::{load_csv, table_to_csv, write_csv};
pub use resample::{split, upsample_minority, Split};
pub use standardize::{fit_standardizer, Standardizer};
pub use synthetic::{generate_synthetic, rupture_label, GeneratorConfig, FEATURE_RANGES};

use crate::error::{Error, Result};

/// Column order contract for the rupture dataset.
pub const FEATURE_NAMES: [&str; 8] = [
    "sxx",
    "syy",
    "sxy",
    "mu_d",
    "friction_drop",
    "d_c",
    "width",
    "height",
];

/// Name of the label column; 1 = rupture propagated, 0 = arrested.
pub const LABEL_COLUMN: &str = "rupture";

pub const ARRESTED: u8 = 0;
pub const PROPAGATED: u8 = 1;

pub fn default_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Row-major feature matrix with binary labels and named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTable {
    feature_names: Vec<String>,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledTable {
    pub fn new(feature_names: Vec<String>, features: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let width = feature_names.len();
        if width == 0 {
            return Err(Error::InvalidConfig("table needs at least one feature".into()));
        }
        if features.len() != width * labels.len() {
            return Err(Error::DimensionMismatch {
                context: "feature matrix",
                expected: width * labels.len(),
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("features must be finite".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidConfig("labels must be 0 or 1".into()));
        }
        Ok(Self {
            feature_names,
            features,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.n_features();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// `(arrested, propagated)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == PROPAGATED).count();
        (self.labels.len() - pos, pos)
    }

    /// New table made of the given rows, in the given order (repeats allowed).
    pub fn select(&self, rows: &[usize]) -> LabeledTable {
        let mut features = Vec::with_capacity(rows.len() * self.n_features());
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledTable {
            feature_names: self.feature_names.clone(),
            features,
            labels,
        }
    }

    /// Copy with column `col` reordered so that row `i` takes the value of
    /// row `perm[i]`.
    pub fn with_column_permuted(&self, col: usize, perm: &[usize]) -> LabeledTable {
        assert_eq!(perm.len(), self.n_rows());
        let w = self.n_features();
        let mut out = self.clone();
        for (i, &src) in perm.iter().enumerate() {
            out.features[i * w + col] = self.features[src * w + col];
        }
        out
    }

    pub(crate) fn map_features(&self, f: impl Fn(usize, f64) -> f64) -> LabeledTable {
        let w = self.n_features();
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % w, v))
            .collect();
        LabeledTable {
            feature_names: self.feature_names.clone(),
            features,
            labels: self.labels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledTable {
        LabeledTable::new(
            vec!["a".into(), "b".into()],
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0],
            vec![0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn accessors() {
        let t = tiny();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.row(1), &[2.0, 20.0]);
        assert_eq!(t.column(1), vec![10.0, 20.0, 30.0]);
        assert_eq!(t.class_counts(), (2, 1));
        assert_eq!(t.feature_index("b").unwrap(), 1);
        assert!(matches!(t.feature_index("z"), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn rejects_invalid_tables() {
        let names = vec!["a".to_string()];
        assert!(LabeledTable::new(names.clone(), vec![f64::NAN], vec![0]).is_err());
        assert!(LabeledTable::new(names.clone(), vec![1.0], vec![2]).is_err());
        assert!(LabeledTable::new(names, vec![1.0, 2.0], vec![0]).is_err());
    }

    #[test]
    fn permute_column_only_touches_that_column() {
        let t = tiny();
        let p = t.with_column_permuted(0, &[2, 0, 1]);
        assert_eq!(p.column(0), vec![3.0, 1.0, 2.0]);
        assert_eq!(p.column(1), t.column(1));
        assert_eq!(p.labels(), t.labels());
    }
}
