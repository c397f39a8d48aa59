//! Versioned JSON checkpoint. See `schema/checkpoint.schema.json` for the
//! key layout. Floating-point values are written with 17 significant digits,
//! so loading reproduces every parameter bit for bit.

use std::path::Path;

use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::model::{BnnClassifier, LayerVariational};
use crate::util::write_atomic;

pub const FORMAT_VERSION: u32 = 1;

/// How the training/test split was drawn, so the test fold can be rebuilt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub seed: u64,
    pub train_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: BnnClassifier,
    pub standardizer: Option<Standardizer>,
    pub feature_names: Vec<String>,
    pub split: Option<SplitRecord>,
}

impl Checkpoint {
    pub fn bare(model: BnnClassifier) -> Self {
        Self {
            model,
            standardizer: None,
            feature_names: Vec::new(),
            split: None,
        }
    }
}

fn precise<S: Serializer>(values: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(values.len()))?;
    for v in values {
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(serde::ser::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(serialize_with = "precise")]
    weight_mean: Vec<f64>,
    #[serde(serialize_with = "precise")]
    weight_rho: Vec<f64>,
    #[serde(serialize_with = "precise")]
    bias_mean: Vec<f64>,
    #[serde(serialize_with = "precise")]
    bias_rho: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StandardizerDoc {
    #[serde(serialize_with = "precise")]
    means: Vec<f64>,
    #[serde(serialize_with = "precise")]
    stds: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    layer_sizes: Vec<usize>,
    layers: Vec<LayerDoc>,
    standardizer: Option<StandardizerDoc>,
    feature_names: Vec<String>,
    #[serde(default)]
    split: Option<SplitRecord>,
}

pub fn checkpoint_to_string(ckpt: &Checkpoint) -> Result<String> {
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        layer_sizes: ckpt.model.layer_sizes(),
        layers: ckpt
            .model
            .layers()
            .iter()
            .map(|l| LayerDoc {
                weight_mean: l.weight_mean.clone(),
                weight_rho: l.weight_rho.clone(),
                bias_mean: l.bias_mean.clone(),
                bias_rho: l.bias_rho.clone(),
            })
            .collect(),
        standardizer: ckpt.standardizer.as_ref().map(|s| StandardizerDoc {
            means: s.means.clone(),
            stds: s.stds.clone(),
        }),
        feature_names: ckpt.feature_names.clone(),
        split: ckpt.split,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::MalformedCheckpoint("missing integer `format_version`".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: FORMAT_VERSION,
        });
    }
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;

    if doc.layer_sizes.len() != doc.layers.len() + 1 {
        return Err(Error::MalformedCheckpoint(format!(
            "{} layer sizes for {} layers",
            doc.layer_sizes.len(),
            doc.layers.len()
        )));
    }
    let layers = doc
        .layers
        .into_iter()
        .zip(doc.layer_sizes.windows(2))
        .map(|(l, pair)| LayerVariational {
            fan_in: pair[0],
            fan_out: pair[1],
            weight_mean: l.weight_mean,
            weight_rho: l.weight_rho,
            bias_mean: l.bias_mean,
            bias_rho: l.bias_rho,
        })
        .collect();
    let model = BnnClassifier::from_layers(layers)?;

    let standardizer = match doc.standardizer {
        Some(s) => {
            let width = model.input_dim();
            if s.means.len() != width || s.stds.len() != width {
                return Err(Error::MalformedCheckpoint(format!(
                    "standardizer width does not match {width} model inputs"
                )));
            }
            if s.stds.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::MalformedCheckpoint("standardizer stds must be positive".into()));
            }
            Some(Standardizer {
                means: s.means,
                stds: s.stds,
            })
        }
        None => None,
    };
    if !doc.feature_names.is_empty() && doc.feature_names.len() != model.input_dim() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} feature names for {} model inputs",
            doc.feature_names.len(),
            model.input_dim()
        )));
    }
    Ok(Checkpoint {
        model,
        standardizer,
        feature_names: doc.feature_names,
        split: doc.split,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, checkpoint_to_string(ckpt)?.as_bytes())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
