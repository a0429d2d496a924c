use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiasSpec, GeneratorSpec, LabeledDataset, NO_FACTOR};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// JSON header of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub generator: Option<GeneratorSpec>,
    pub bias: Option<BiasSpec>,
    pub seed: u64,
    pub num_examples: usize,
    pub num_classes: usize,
    pub class_counts: Vec<usize>,
    pub image_shape: (usize, usize, usize),
    pub provenance: String,
}

const FORMAT: &str = "ladlab-dataset-v1";

impl DatasetManifest {
    pub fn describe(
        ds: &LabeledDataset,
        generator: Option<&GeneratorSpec>,
        bias: Option<&BiasSpec>,
        seed: u64,
    ) -> Self {
        DatasetManifest {
            format: FORMAT.to_string(),
            generator: generator.cloned(),
            bias: bias.cloned(),
            seed,
            num_examples: ds.len(),
            num_classes: ds.num_classes,
            class_counts: ds.class_counts(),
            image_shape: ds.image_shape(),
            provenance: ds.provenance.clone(),
        }
    }
}

pub fn save_dataset(path: &Path, ds: &LabeledDataset, manifest: &DatasetManifest) -> Result<()> {
    let mut ckpt = Checkpoint::new(serde_json::to_value(manifest)?);
    let n = ds.len();
    ckpt.push("images", ds.images.clone());
    let labels: Vec<f64> = ds.labels.iter().map(|&l| l as f64).collect();
    ckpt.push("labels", Tensor::new(vec![n], labels)?);
    let bias: Vec<f64> = ds.bias_values.iter().map(|&b| b as f64).collect();
    ckpt.push("bias_values", Tensor::new(vec![n], bias)?);
    let aligned: Vec<f64> = ds.aligned.iter().map(|&a| f64::from(u8::from(a))).collect();
    ckpt.push("aligned", Tensor::new(vec![n], aligned)?);
    ckpt.save(path)
}

fn integral(values: &[f64], name: &str, source: &str) -> Result<Vec<i64>> {
    values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v.abs() < 1e15 {
                Ok(v as i64)
            } else {
                Err(Error::format(
                    source,
                    format!("non-integer entry {v} in '{name}'"),
                ))
            }
        })
        .collect()
}

pub fn load_dataset(path: &Path) -> Result<(LabeledDataset, DatasetManifest)> {
    let source = path.display().to_string();
    let ckpt = Checkpoint::load(path)?;
    let manifest: DatasetManifest = serde_json::from_value(ckpt.manifest.clone())
        .map_err(|e| Error::format(&source, format!("bad dataset manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::format(
            &source,
            format!("unknown dataset format '{}'", manifest.format),
        ));
    }
    let images = ckpt.tensor("images")?.clone();
    let labels = integral(ckpt.tensor("labels")?.data(), "labels", &source)?;
    let bias_values = integral(ckpt.tensor("bias_values")?.data(), "bias_values", &source)?;
    let aligned = integral(ckpt.tensor("aligned")?.data(), "aligned", &source)?;
    if labels.iter().any(|&l| l < 0) || bias_values.iter().any(|&b| b < NO_FACTOR) {
        return Err(Error::format(&source, "negative label or bias value"));
    }
    let labels: Vec<usize> = labels.into_iter().map(|l| l as usize).collect();
    let mut ds = LabeledDataset::new(images, labels, manifest.num_classes, &manifest.provenance)
        .map_err(|e| Error::format(&source, e.to_string()))?;
    if bias_values.len() != ds.len()
        || aligned.len() != ds.len()
        || manifest.num_examples != ds.len()
    {
        return Err(Error::format(
            &source,
            "per-example records disagree with image count",
        ));
    }
    if manifest.image_shape != ds.image_shape() {
        return Err(Error::format(
            &source,
            "manifest image shape disagrees with blob",
        ));
    }
    ds.bias_values = bias_values;
    ds.aligned = aligned.into_iter().map(|a| a != 0).collect();
    Ok((ds, manifest))
}
