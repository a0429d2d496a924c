//! End-to-end runs: the vanilla baseline (f_strong on the biased images) and
//! the three-stage latent adversarial recipe (VQ-VAE, latent classifier f,
//! walk + decode, then f_strong on the decoded images).

mod report;
mod suite;

use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::biasdata::{
    apply_bias, crop_flip_batch, gen_glyphs, load_idx, make_eval_set, BiasKind, BiasSpec,
    BiasValue, EvalKind, EvalMode, GeneratorKind, GeneratorSpec, LabeledDataset,
};
use crate::diagnostics::{
    extract_factors, fit_corruption_centroids, label_bias_mutual_information, FactorExtractor,
};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, train_classifier_with, MlpParams, OptimConfig, TrainHooks, TrainedClassifier,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;
use crate::vqvae::{train_vqvae, TrainedVqVae, VqVaeConfig, VqVaeParams};
use crate::walk::{adversarial_walk, debias_dataset, DebiasOutput, WalkConfig};

pub use report::{AccuracyEntry, ExperimentReport, MiAudit, StageCurves, CODE_VERSION};
pub use suite::{default_suite, run_suite, write_suite_csv, SuiteCell, SuiteReport, SuiteRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lad,
    Vanilla,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lad => "lad",
            Method::Vanilla => "vanilla",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![100],
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub random_crop: bool,
    pub crop_padding: usize,
    pub horizontal_flip: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            random_crop: true,
            crop_padding: 1,
            horizontal_flip: false,
        }
    }
}

impl AugmentationConfig {
    fn enabled(&self) -> bool {
        (self.random_crop && self.crop_padding > 0) || self.horizontal_flip
    }

    fn padding(&self) -> usize {
        if self.random_crop {
            self.crop_padding
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Method,
    pub generator: GeneratorSpec,
    /// size of the unbiased base set that evaluation sets are built from
    pub test_samples_per_class: usize,
    pub bias: BiasSpec,
    pub vqvae: VqVaeConfig,
    pub f: ClassifierConfig,
    /// defaults to a larger step than `WalkConfig::default()`, sized to the
    /// default codebook spacing
    pub walk: WalkConfig,
    pub f_strong: ClassifierConfig,
    pub augmentation: AugmentationConfig,
    /// train f_strong on the decoded images plus the originals
    pub mix_originals: bool,
    pub eval: Vec<EvalMode>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            mode: Method::Lad,
            generator: GeneratorSpec::default(),
            test_samples_per_class: 100,
            bias: BiasSpec::default(),
            vqvae: VqVaeConfig::default(),
            f: ClassifierConfig::default(),
            walk: WalkConfig {
                alpha: 0.7,
                ..WalkConfig::default()
            },
            f_strong: ClassifierConfig {
                hidden: vec![256, 256],
                optim: OptimConfig {
                    learning_rate: 0.02,
                    epochs: 60,
                    ..OptimConfig::default()
                },
            },
            augmentation: AugmentationConfig::default(),
            mix_originals: false,
            eval: vec![
                EvalMode::independent(),
                EvalMode::conditioned(BiasValue::Color([0.5, 0.5, 0.5])),
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.bias.validate(self.generator.num_classes)?;
        self.vqvae.validate()?;
        self.walk.validate()?;
        self.f.optim.validate()?;
        self.f_strong.optim.validate()?;
        if self.f.hidden.contains(&0) || self.f_strong.hidden.contains(&0) {
            return Err(Error::usage("hidden layer widths must be positive"));
        }
        if self.test_samples_per_class == 0 {
            return Err(Error::usage("test_samples_per_class must be positive"));
        }
        if self.eval.is_empty() {
            return Err(Error::usage("eval list must not be empty"));
        }
        for mode in &self.eval {
            mode.validate()?;
            if self.bias.kind.is_color()
                && matches!(mode.conditioned_bias_value, Some(BiasValue::Clean(_)))
            {
                return Err(Error::usage(format!(
                    "{} evaluation needs a conditioned colour",
                    self.bias.kind.name()
                )));
            }
        }
        if self.mix_originals && self.walk.regenerate_per_epoch {
            return Err(Error::usage(
                "mix_originals cannot be combined with walk.regenerate_per_epoch",
            ));
        }
        let (h, w, _) = self.generator.image_size;
        if self.augmentation.padding() >= h.min(w) {
            return Err(Error::usage("crop_padding must be smaller than the image"));
        }
        Ok(())
    }

    /// Dataset column of the summary table, e.g. `glyphs_background_color`.
    pub fn dataset_name(&self) -> String {
        let base = match self.generator.kind {
            GeneratorKind::Glyphs => "glyphs",
            GeneratorKind::IdxIngest => "idx",
        };
        format!("{base}_{}", self.bias.kind.name())
    }

    pub fn stage_seed(&self, stage: &str, sub_seed: u64) -> u64 {
        derive_seed(self.seed, stage) ^ sub_seed
    }

    pub fn vqvae_config(&self) -> VqVaeConfig {
        let mut c = self.vqvae.clone();
        c.optim.seed = self.stage_seed("vqvae", self.vqvae.optim.seed);
        c
    }

    pub fn f_optim(&self) -> OptimConfig {
        OptimConfig {
            seed: self.stage_seed("f", self.f.optim.seed),
            ..self.f.optim.clone()
        }
    }

    pub fn f_strong_optim(&self) -> OptimConfig {
        OptimConfig {
            seed: self.stage_seed("f_strong", self.f_strong.optim.seed),
            ..self.f_strong.optim.clone()
        }
    }
}

fn load_base_sets(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let g = &cfg.generator;
    match g.kind {
        GeneratorKind::Glyphs => {
            let train = gen_glyphs(&GeneratorSpec {
                seed: cfg.stage_seed("train-glyphs", g.seed),
                ..g.clone()
            })?;
            let test = gen_glyphs(&GeneratorSpec {
                seed: cfg.stage_seed("test-glyphs", g.seed),
                samples_per_class: cfg.test_samples_per_class,
                ..g.clone()
            })?;
            Ok((train, test))
        }
        GeneratorKind::IdxIngest => {
            let p = g.idx.as_ref().expect("validated");
            let train = load_idx(Path::new(&p.train_images), Path::new(&p.train_labels))?;
            let test = load_idx(Path::new(&p.test_images), Path::new(&p.test_labels))?;
            for ds in [&train, &test] {
                if ds.image_shape() != g.image_size {
                    return Err(Error::usage(format!(
                        "idx images are {:?} but generator.image_size is {:?}",
                        ds.image_shape(),
                        g.image_size
                    )));
                }
                if ds.num_classes > g.num_classes {
                    return Err(Error::usage(format!(
                        "idx labels reach class {} but num_classes is {}",
                        ds.num_classes - 1,
                        g.num_classes
                    )));
                }
            }
            let fix = |mut ds: LabeledDataset| {
                ds.num_classes = g.num_classes;
                ds
            };
            Ok((fix(train), fix(test)))
        }
    }
}

/// The biased training set and one evaluation set per configured mode.
pub fn build_datasets(
    cfg: &ExperimentConfig,
) -> Result<(LabeledDataset, Vec<(EvalMode, LabeledDataset)>)> {
    let (train_base, test_base) = load_base_sets(cfg)?;
    let train = apply_bias(&train_base, &cfg.bias, derive_seed(cfg.seed, "train-bias"))?;
    let evals = cfg
        .eval
        .iter()
        .enumerate()
        .map(|(i, mode)| {
            let seed = derive_seed(cfg.seed, &format!("eval-{i}"));
            Ok((
                mode.clone(),
                make_eval_set(&test_base, &cfg.bias, mode, seed)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((train, evals))
}

/// Quantised latents of every image as `[n, M·d]` rows.
pub fn latent_inputs(vqvae: &VqVaeParams, ds: &LabeledDataset) -> Result<Tensor> {
    let code = vqvae.latent_code(&ds.flatten())?;
    Tensor::new(
        vec![ds.len(), vqvae.latent_width()],
        code.quantised.data().to_vec(),
    )
}

pub fn train_vqvae_stage(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<TrainedVqVae> {
    train_vqvae(train, &cfg.vqvae_config()).map_err(|e| e.in_stage("vqvae"))
}

/// The biased latent classifier f on `(quantised h, y)`.
pub fn train_f_stage(
    cfg: &ExperimentConfig,
    vqvae: &VqVaeParams,
    train: &LabeledDataset,
) -> Result<TrainedClassifier> {
    let run = || {
        let h = latent_inputs(vqvae, train)?;
        train_classifier_with(
            &h,
            &train.labels,
            train.num_classes,
            &cfg.f.hidden,
            &cfg.f_optim(),
            TrainHooks::default(),
        )
    };
    run().map_err(|e| e.in_stage("f"))
}

pub fn debias_stage(
    cfg: &ExperimentConfig,
    vqvae: &VqVaeParams,
    f: &MlpParams,
    train: &LabeledDataset,
) -> Result<DebiasOutput> {
    debias_dataset(vqvae, f, train, &cfg.walk).map_err(|e| e.in_stage("walk"))
}

/// Latent walker that re-walks every minibatch on the fly.
pub struct OnlineWalk<'a> {
    pub vqvae: &'a VqVaeParams,
    pub f: &'a MlpParams,
}

/// Trains f_strong on `train`. With an online walker, each (augmented)
/// minibatch is encoded, walked and decoded before the update.
pub fn train_strong_stage(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    online: Option<OnlineWalk<'_>>,
) -> Result<TrainedClassifier> {
    let shape = train.image_shape();
    let aug = &cfg.augmentation;
    let walk_cfg = &cfg.walk;
    let transform = |batch: &Tensor, rng: &mut Rng| -> Result<Tensor> {
        let mut b = if aug.enabled() {
            crop_flip_batch(batch, shape, aug.padding(), aug.horizontal_flip, rng)?
        } else {
            batch.clone()
        };
        if let Some(w) = &online {
            let code = w.vqvae.latent_code(&b)?;
            let (walked, _) = adversarial_walk(w.f, &code, &w.vqvae.codebook, walk_cfg)?;
            b = w.vqvae.decode(&walked.quantised)?;
        }
        Ok(b)
    };
    let hooks = TrainHooks {
        augment: (aug.enabled() || online.is_some()).then_some(&transform as _),
        ..TrainHooks::default()
    };
    train_classifier_with(
        &train.flatten(),
        &train.labels,
        train.num_classes,
        &cfg.f_strong.hidden,
        &cfg.f_strong_optim(),
        hooks,
    )
    .map_err(|e| e.in_stage("f_strong"))
}

/// Argmax accuracy of `classifier` on a dataset; ties go to the lowest class.
pub fn evaluate(classifier: &MlpParams, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    if classifier.input_dim() != dataset.pixels_per_image() {
        return Err(Error::usage(format!(
            "classifier takes {} inputs but images have {} values",
            classifier.input_dim(),
            dataset.pixels_per_image()
        )));
    }
    accuracy(classifier, &dataset.flatten(), &dataset.labels)
}

/// Factor estimator matching the bias kind. Corruption centroids are fitted
/// on `reference`, whose bias records are known.
pub fn factor_extractor(
    bias: &BiasSpec,
    num_classes: usize,
    reference: &LabeledDataset,
) -> Result<FactorExtractor> {
    Ok(match bias.kind {
        BiasKind::BackgroundColor => {
            FactorExtractor::BackgroundPalette(bias.palette_or_default(num_classes))
        }
        BiasKind::ForegroundColor => {
            FactorExtractor::ForegroundPalette(bias.palette_or_default(num_classes))
        }
        BiasKind::OnePixel => FactorExtractor::OnePixelColumn {
            num_classes,
            pixel_value: bias.pixel_value,
        },
        BiasKind::Corruption => {
            fit_corruption_centroids(reference, bias.corruptions.as_deref().expect("validated"))?
        }
    })
}

/// MI(label; estimated factor) on each dataset, in nats.
pub fn mutual_information(extractor: &FactorExtractor, ds: &LabeledDataset) -> Result<f64> {
    label_bias_mutual_information(&ds.labels, &extract_factors(ds, extractor)?)
}

fn concat_datasets(
    a: &LabeledDataset,
    b: &LabeledDataset,
    provenance: &str,
) -> Result<LabeledDataset> {
    if a.image_shape() != b.image_shape() {
        return Err(Error::usage(
            "cannot mix datasets with different image shapes",
        ));
    }
    let (h, w, c) = a.image_shape();
    let mut data = a.images.data().to_vec();
    data.extend_from_slice(b.images.data());
    let mut out = LabeledDataset::new(
        Tensor::new(vec![a.len() + b.len(), h, w, c], data)?,
        [a.labels.clone(), b.labels.clone()].concat(),
        a.num_classes,
        provenance,
    )?;
    out.bias_values = [a.bias_values.clone(), b.bias_values.clone()].concat();
    out.aligned = [a.aligned.clone(), b.aligned.clone()].concat();
    Ok(out)
}

/// Everything a run produced, for callers that persist artefacts.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub train: LabeledDataset,
    pub eval_sets: Vec<(EvalMode, LabeledDataset)>,
    pub vqvae: Option<TrainedVqVae>,
    pub f: Option<TrainedClassifier>,
    pub debiased: Option<DebiasOutput>,
    pub f_strong: TrainedClassifier,
}

struct Timer(Vec<(String, f64)>);

impl Timer {
    fn time<T>(&mut self, stage: &str, run: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = run()?;
        let secs = start.elapsed().as_secs_f64();
        info!("stage={stage} done seconds={secs:.2}");
        self.0.push((stage.to_string(), secs));
        Ok(out)
    }
}

fn evaluate_all(
    f_strong: &MlpParams,
    evals: &[(EvalMode, LabeledDataset)],
) -> Result<Vec<AccuracyEntry>> {
    evals
        .iter()
        .map(|(mode, ds)| {
            if ds.provenance.contains("vqvae") {
                return Err(Error::usage(format!(
                    "evaluation set has provenance '{}'; only original images may be evaluated",
                    ds.provenance
                )));
            }
            let acc = evaluate(f_strong, ds)?;
            info!("stage=evaluate mode={} accuracy={acc:.4}", mode.label());
            Ok(AccuracyEntry {
                mode: mode.clone(),
                mean: acc,
                per_seed: vec![acc],
                provenance: ds.provenance.clone(),
            })
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("evaluate"))
}

fn run(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let mut timer = Timer(Vec::new());
    let (train, eval_sets) = timer.time("data", || {
        build_datasets(cfg).map_err(|e| e.in_stage("data"))
    })?;
    let extractor =
        factor_extractor(&cfg.bias, train.num_classes, &train).map_err(|e| e.in_stage("audit"))?;
    let mi_before = mutual_information(&extractor, &train).map_err(|e| e.in_stage("audit"))?;

    let (vq, f, debiased, f_strong) = match cfg.mode {
        Method::Vanilla => {
            let f_strong = timer.time("f_strong", || train_strong_stage(cfg, &train, None))?;
            (None, None, None, f_strong)
        }
        Method::Lad => {
            let vq = timer.time("vqvae", || train_vqvae_stage(cfg, &train))?;
            let f = timer.time("f", || train_f_stage(cfg, &vq.params, &train))?;
            let debiased =
                timer.time("walk", || debias_stage(cfg, &vq.params, &f.params, &train))?;
            let f_strong = timer.time("f_strong", || {
                if cfg.walk.regenerate_per_epoch {
                    let online = OnlineWalk {
                        vqvae: &vq.params,
                        f: &f.params,
                    };
                    train_strong_stage(cfg, &train, Some(online))
                } else if cfg.mix_originals {
                    let mixed = concat_datasets(&debiased.dataset, &train, "vqvae_walk+original")?;
                    train_strong_stage(cfg, &mixed, None)
                } else {
                    train_strong_stage(cfg, &debiased.dataset, None)
                }
            })?;
            (Some(vq), Some(f), Some(debiased), f_strong)
        }
    };
    let accuracies = timer.time("evaluate", || evaluate_all(&f_strong.params, &eval_sets))?;
    let mi_after = match &debiased {
        Some(d) => {
            Some(mutual_information(&extractor, &d.dataset).map_err(|e| e.in_stage("audit"))?)
        }
        None => None,
    };
    let f_train_accuracy = match (&vq, &f) {
        (Some(vq), Some(f)) => Some(accuracy(
            &f.params,
            &latent_inputs(&vq.params, &train)?,
            &train.labels,
        )?),
        _ => None,
    };
    let report = ExperimentReport {
        code_version: CODE_VERSION.to_string(),
        dataset: cfg.dataset_name(),
        method: cfg.mode,
        bias_ratio: cfg.bias.bias_ratio,
        num_classes: train.num_classes,
        chance: 1.0 / train.num_classes as f64,
        train_size: train.len(),
        train_provenance: train.provenance.clone(),
        accuracies,
        f_train_accuracy,
        f_strong_final_train_accuracy: f_strong.epochs.last().map(|e| e.accuracy),
        curves: StageCurves {
            vqvae: vq.as_ref().map(|v| v.epochs.clone()),
            f: f.as_ref().map(|f| f.epochs.clone()),
            f_strong: f_strong.epochs.clone(),
        },
        vqvae_codes_used: vq
            .as_ref()
            .map(|v| v.usage.iter().filter(|&&u| u > 0).count()),
        vqvae_collapse_warning: vq.as_ref().and_then(|v| v.collapse_warning.clone()),
        walk: debiased.as_ref().map(|d| d.summary.clone()),
        mi_audit: MiAudit {
            before: mi_before,
            after: mi_after,
        },
        stage_seconds: timer.0,
        config: cfg.clone(),
    };
    Ok(ExperimentRun {
        report,
        train,
        eval_sets,
        vqvae: vq,
        f,
        debiased,
        f_strong,
    })
}

/// Full run for the configured mode.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run(cfg)
}

pub fn run_vanilla(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.mode != Method::Vanilla {
        return Err(Error::usage("run_vanilla needs mode = vanilla"));
    }
    Ok(run(cfg)?.report)
}

pub fn run_lad(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if cfg.mode != Method::Lad {
        return Err(Error::usage("run_lad needs mode = lad"));
    }
    Ok(run(cfg)?.report)
}

/// Independent and first conditioned accuracy of a report.
pub fn headline_accuracies(report: &ExperimentReport) -> (Option<f64>, Option<f64>) {
    let pick = |k: EvalKind| {
        report
            .accuracies
            .iter()
            .find(|a| a.mode.mode == k)
            .map(|a| a.mean)
    };
    (pick(EvalKind::Independent), pick(EvalKind::Conditioned))
}
