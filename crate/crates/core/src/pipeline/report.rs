use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Method};
use crate::biasdata::EvalMode;
use crate::nn::EpochSummary;
use crate::vqvae::VqEpochRecord;
use crate::walk::WalkSummary;

pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub mode: EvalMode,
    pub mean: f64,
    pub per_seed: Vec<f64>,
    /// provenance tag of the evaluated images
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCurves {
    pub vqvae: Option<Vec<VqEpochRecord>>,
    pub f: Option<Vec<EpochSummary>>,
    pub f_strong: Vec<EpochSummary>,
}

/// MI(label; estimated bias factor) on the training images, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiAudit {
    pub before: f64,
    /// on the debiased images; absent for vanilla runs
    pub after: Option<f64>,
}

impl MiAudit {
    /// Relative drop `(before - after) / before`.
    pub fn relative_drop(&self) -> Option<f64> {
        self.after.map(|a| {
            if self.before > 0.0 {
                (self.before - a) / self.before
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub code_version: String,
    pub dataset: String,
    pub method: Method,
    pub bias_ratio: f64,
    pub num_classes: usize,
    pub chance: f64,
    pub train_size: usize,
    pub train_provenance: String,
    pub accuracies: Vec<AccuracyEntry>,
    /// accuracy of f on the quantised training latents
    pub f_train_accuracy: Option<f64>,
    pub f_strong_final_train_accuracy: Option<f64>,
    pub curves: StageCurves,
    pub vqvae_codes_used: Option<usize>,
    pub vqvae_collapse_warning: Option<String>,
    pub walk: Option<WalkSummary>,
    pub mi_audit: MiAudit,
    /// wall-clock seconds per stage; logged, never serialized
    #[serde(skip)]
    pub stage_seconds: Vec<(String, f64)>,
    pub config: ExperimentConfig,
}
