use serde::{Deserialize, Serialize};

use super::LabeledTable;
use crate::error::{Error, Result};

/// Per-column z-score transform. Standard deviations use the population
/// (1/N) form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn fit_standardizer(train: &LabeledTable) -> Result<Standardizer> {
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = train.n_rows() as f64;
    let mut means = Vec::with_capacity(train.n_features());
    let mut stds = Vec::with_capacity(train.n_features());
    for (j, name) in train.feature_names().iter().enumerate() {
        let col = train.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ConstantColumn(name.clone()));
        }
        means.push(mean);
        stds.push(std);
    }
    Ok(Standardizer { means, stds })
}

impl Standardizer {
    fn check_width(&self, table: &LabeledTable) -> Result<()> {
        if table.n_features() != self.means.len() {
            return Err(Error::DimensionMismatch {
                context: "standardizer columns",
                expected: self.means.len(),
                actual: table.n_features(),
            });
        }
        Ok(())
    }

    /// `(x - mean) / std` per column.
    pub fn apply(&self, table: &LabeledTable) -> Result<LabeledTable> {
        self.check_width(table)?;
        Ok(table.map_features(|j, v| (v - self.means[j]) / self.stds[j]))
    }

    pub fn invert(&self, table: &LabeledTable) -> Result<LabeledTable> {
        self.check_width(table)?;
        Ok(table.map_features(|j, v| v * self.stds[j] + self.means[j]))
    }
}
