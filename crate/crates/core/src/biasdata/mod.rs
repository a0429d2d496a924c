//! Collider-biased image datasets.
//!
//! An unbiased base set (procedural glyphs or IDX digits) carries the causal
//! class signal. A bias is then applied: each example gets a confounding
//! factor (a pixel column, a background or foreground colour, or a
//! corruption) which equals its class's designated factor with probability
//! `bias_ratio` and is otherwise one of the other classes' factors.
//! Evaluation sets either draw the factor independently of the label or
//! hold it at a single value.

mod augment;
mod bias;
mod corruption;
mod dataset_file;
mod eval;
mod glyphs;
mod idx;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_random_crop_flip, crop_flip_batch, CropFlip};
pub use bias::{
    apply_background_bias, apply_bias, apply_corruption_bias, apply_foreground_bias,
    apply_one_pixel_bias, default_palette, glyph_mask, FOREGROUND_THRESHOLD,
};
pub use corruption::Corruption;
pub use dataset_file::{load_dataset, save_dataset, DatasetManifest};
pub use eval::make_eval_set;
pub use glyphs::{gen_glyphs, MAX_GLYPH_CLASSES};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

/// Sentinel in `bias_values` for examples with no confounding factor applied
/// (clean images or a held-constant conditioned value).
pub const NO_FACTOR: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Glyphs,
    IdxIngest,
}

/// IDX file locations for `idx_ingest` generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub train_images: String,
    pub train_labels: String,
    pub test_images: String,
    pub test_labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub num_classes: usize,
    /// (height, width, channels)
    pub image_size: (usize, usize, usize),
    pub samples_per_class: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxPaths>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            kind: GeneratorKind::Glyphs,
            num_classes: 10,
            image_size: (12, 12, 1),
            samples_per_class: 200,
            seed: 0,
            idx: None,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image_size;
        if self.num_classes < 2 {
            return Err(Error::usage("num_classes must be at least 2"));
        }
        if c != 1 && c != 3 {
            return Err(Error::usage(format!("channels must be 1 or 3, got {c}")));
        }
        if self.num_classes > w {
            return Err(Error::usage(format!(
                "num_classes {} exceeds image width {w}",
                self.num_classes
            )));
        }
        if (self.kind == GeneratorKind::IdxIngest) != self.idx.is_some() {
            return Err(Error::usage(
                "idx paths must be given exactly when kind is idx_ingest",
            ));
        }
        if self.kind == GeneratorKind::Glyphs {
            if h < 8 || w < 8 {
                return Err(Error::usage(format!(
                    "glyph images must be at least 8x8, got {h}x{w}"
                )));
            }
            if self.num_classes > MAX_GLYPH_CLASSES {
                return Err(Error::usage(format!(
                    "only {MAX_GLYPH_CLASSES} glyph patterns exist, asked for {}",
                    self.num_classes
                )));
            }
        }
        if self.samples_per_class == 0 {
            return Err(Error::usage("samples_per_class must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    OnePixel,
    BackgroundColor,
    ForegroundColor,
    Corruption,
}

impl BiasKind {
    pub fn name(self) -> &'static str {
        match self {
            BiasKind::OnePixel => "one_pixel",
            BiasKind::BackgroundColor => "background_color",
            BiasKind::ForegroundColor => "foreground_color",
            BiasKind::Corruption => "corruption",
        }
    }

    pub fn is_color(self) -> bool {
        matches!(self, BiasKind::BackgroundColor | BiasKind::ForegroundColor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSpec {
    pub kind: BiasKind,
    pub bias_ratio: f64,
    /// One RGB colour per class; defaults to evenly spaced hues.
    pub palette: Option<Vec<[f64; 3]>>,
    /// One corruption per class.
    pub corruptions: Option<Vec<Corruption>>,
    pub color_noise_std: f64,
    pub pixel_value: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            kind: BiasKind::BackgroundColor,
            bias_ratio: 1.0,
            palette: None,
            corruptions: None,
            color_noise_std: 0.005,
            pixel_value: 1.0,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.bias_ratio) {
            return Err(Error::usage(format!(
                "bias_ratio must be in [0, 1], got {}",
                self.bias_ratio
            )));
        }
        if !(self.color_noise_std >= 0.0) {
            return Err(Error::usage("color_noise_std must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.pixel_value) {
            return Err(Error::usage(format!(
                "pixel_value must be in [0, 1], got {}",
                self.pixel_value
            )));
        }
        if let Some(p) = &self.palette {
            if p.len() != num_classes {
                return Err(Error::usage(format!(
                    "palette has {} entries for {num_classes} classes",
                    p.len()
                )));
            }
            if p.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::usage("palette colours must lie in [0, 1]"));
            }
        }
        if self.kind == BiasKind::Corruption {
            match &self.corruptions {
                Some(c) if c.len() == num_classes => {}
                Some(c) => {
                    return Err(Error::usage(format!(
                        "corruption list has {} entries for {num_classes} classes",
                        c.len()
                    )))
                }
                None => return Err(Error::usage("corruption bias needs a corruption list")),
            }
        }
        Ok(())
    }

    pub fn palette_or_default(&self, num_classes: usize) -> Vec<[f64; 3]> {
        self.palette
            .clone()
            .unwrap_or_else(|| default_palette(num_classes))
    }
}

/// A held-constant bias factor: an RGB colour, or no factor at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BiasValue {
    Color([f64; 3]),
    Clean(CleanTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanTag {
    Clean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Independent,
    Conditioned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMode {
    pub mode: EvalKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioned_bias_value: Option<BiasValue>,
}

impl EvalMode {
    pub fn independent() -> Self {
        EvalMode {
            mode: EvalKind::Independent,
            conditioned_bias_value: None,
        }
    }

    pub fn conditioned(value: BiasValue) -> Self {
        EvalMode {
            mode: EvalKind::Conditioned,
            conditioned_bias_value: Some(value),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.mode, &self.conditioned_bias_value) {
            (EvalKind::Conditioned, None) => Err(Error::usage(
                "conditioned evaluation needs a conditioned_bias_value",
            )),
            (EvalKind::Independent, Some(_)) => Err(Error::usage(
                "independent evaluation takes no conditioned_bias_value",
            )),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self.mode {
            EvalKind::Independent => "independent",
            EvalKind::Conditioned => "conditioned",
        }
    }
}

/// Images `[n, h, w, c]` in [0, 1] with labels and per-example bias records.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// index of the applied factor, or [`NO_FACTOR`]
    pub bias_values: Vec<i64>,
    pub aligned: Vec<bool>,
    pub num_classes: usize,
    /// where the images came from, e.g. `glyphs`, `idx`, `vqvae_walk`
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        provenance: &str,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::usage(format!(
                "dataset images must be [n, h, w, c], got {:?}",
                images.shape()
            )));
        }
        let n = images.shape()[0];
        if labels.len() != n {
            return Err(Error::usage(format!(
                "{} labels for {n} images",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::usage(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            bias_values: vec![NO_FACTOR; n],
            aligned: vec![false; n],
            num_classes,
            provenance: provenance.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (height, width, channels)
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn pixels_per_image(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.pixels_per_image();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.pixels_per_image();
        &mut self.images.data_mut()[i * n..(i + 1) * n]
    }

    /// `[n, h * w * c]` view for the classifiers.
    pub fn flatten(&self) -> Tensor {
        self.images
            .clone()
            .reshape(vec![self.len(), self.pixels_per_image()])
            .expect("same element count")
    }

    pub fn aligned_fraction(&self) -> f64 {
        self.aligned.iter().filter(|&&a| a).count() as f64 / self.len().max(1) as f64
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Copy with every image broadcast to three channels.
    pub fn to_rgb(&self) -> LabeledDataset {
        let (h, w, c) = self.image_shape();
        if c == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.images.len() * 3);
        for &v in self.images.data() {
            data.extend_from_slice(&[v, v, v]);
        }
        LabeledDataset {
            images: Tensor::new(vec![self.len(), h, w, 3], data).expect("sized"),
            ..self.clone()
        }
    }

    /// Copy with images replaced, keeping labels and bias records.
    pub fn with_images(&self, images: Tensor, provenance: &str) -> Result<LabeledDataset> {
        if images.rank() != 4 || images.shape()[0] != self.len() {
            return Err(Error::Shape {
                op: "with_images",
                lhs: self.images.shape().to_vec(),
                rhs: images.shape().to_vec(),
            });
        }
        Ok(LabeledDataset {
            images,
            provenance: provenance.to_string(),
            ..self.clone()
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            images: self.images.select_leading(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            bias_values: indices.iter().map(|&i| self.bias_values[i]).collect(),
            aligned: indices.iter().map(|&i| self.aligned[i]).collect(),
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        })
    }

    pub fn check_pixel_range(&self) -> Result<()> {
        if let Some(v) = self
            .images
            .data()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::numerical(
                "dataset",
                format!("pixel value {v} outside [0, 1]"),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_mode_json_shapes() {
        let m: EvalMode =
            serde_json::from_str(r#"{"mode":"conditioned","conditioned_bias_value":[0,0,0]}"#)
                .unwrap();
        assert_eq!(m, EvalMode::conditioned(BiasValue::Color([0.0; 3])));
        let c: EvalMode =
            serde_json::from_str(r#"{"mode":"conditioned","conditioned_bias_value":"clean"}"#)
                .unwrap();
        assert!(matches!(
            c.conditioned_bias_value,
            Some(BiasValue::Clean(_))
        ));
        let bad: EvalMode = serde_json::from_str(r#"{"mode":"conditioned"}"#).unwrap();
        assert!(bad.validate().is_err());
        assert!(EvalMode::independent().validate().is_ok());
    }

    #[test]
    fn generator_spec_validation() {
        let mut s = GeneratorSpec {
            num_classes: 4,
            ..GeneratorSpec::default()
        };
        assert!(s.validate().is_ok());
        s.image_size = (16, 3, 1);
        assert!(s.validate().is_err());
        s.image_size = (16, 16, 2);
        assert!(s.validate().is_err());
        s.image_size = (16, 16, 1);
        s.num_classes = 11;
        assert!(s.validate().is_err());
    }

    #[test]
    fn generator_spec_json() {
        let s: GeneratorSpec = serde_json::from_str(
            r#"{"kind":"glyphs","num_classes":4,"image_size":[12,12,1],"samples_per_class":5}"#,
        )
        .unwrap();
        assert_eq!(s.image_size, (12, 12, 1));
        assert_eq!(s.kind, GeneratorKind::Glyphs);
    }

    #[test]
    fn bias_spec_validation() {
        let mut b = BiasSpec::default();
        assert!(b.validate(4).is_ok());
        b.bias_ratio = 1.5;
        assert!(b.validate(4).is_err());
        b.bias_ratio = 0.5;
        b.palette = Some(vec![[0.0; 3]; 3]);
        assert!(b.validate(4).is_err());
        b.palette = None;
        b.kind = BiasKind::Corruption;
        assert!(b.validate(4).is_err());
    }
}
