use std::collections::HashMap;
use std::path::Path;

use super::{LabeledTable, LABEL_COLUMN};
use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Reads a labeled table, matching columns by header name. Columns may appear
/// in any order; the result follows `expected_names`. Row numbers in errors
/// count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, expected_names: &[&str]) -> Result<LabeledTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers()?.clone();
    if header.iter().all(str::is_empty) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let positions: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        positions.get(name).copied().ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let columns = expected_names
        .iter()
        .map(|n| locate(n))
        .collect::<Result<Vec<_>>>()?;
    let label_col = locate(LABEL_COLUMN)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record?;
        for (&col, name) in columns.iter().zip(expected_names) {
            let cell = record.get(col).unwrap_or("");
            let value: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::BadCell {
                    path: path.to_path_buf(),
                    row,
                    column: name.to_string(),
                    value: cell.to_string(),
                }
            })?;
            features.push(value);
        }
        let cell = record.get(label_col).unwrap_or("");
        let label = match cell {
            "0" => 0,
            "1" => 1,
            _ => {
                return Err(Error::NonBinaryLabel {
                    path: path.to_path_buf(),
                    row,
                    value: cell.to_string(),
                })
            }
        };
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let names = expected_names.iter().map(|s| s.to_string()).collect();
    LabeledTable::new(names, features, labels)
}

/// CSV text with the feature columns followed by the label column. Numbers use
/// the shortest representation that parses back to the same double.
pub fn table_to_csv(table: &LabeledTable) -> String {
    let mut out = String::new();
    for name in table.feature_names() {
        out.push_str(name);
        out.push(',');
    }
    out.push_str(LABEL_COLUMN);
    out.push('\n');
    for (row, label) in table.rows().zip(table.labels()) {
        for v in row {
            out.push_str(&v.to_string());
            out.push(',');
        }
        out.push_str(if *label == 1 { "1\n" } else { "0\n" });
    }
    out
}

pub fn write_csv(table: &LabeledTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, table_to_csv(table).as_bytes())
}
