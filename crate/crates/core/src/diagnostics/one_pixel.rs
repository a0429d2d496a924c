use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{gradient_ratio, PixelPartition};
use crate::biasdata::{
    apply_one_pixel_bias, gen_glyphs, make_eval_set, BiasKind, BiasSpec, EvalMode, GeneratorSpec,
};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, train_classifier_with, OptimConfig, OptimKind, StepObservation, TrainHooks,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnePixelConfig {
    pub num_classes: usize,
    pub image_size: (usize, usize, usize),
    pub train_samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
    pub max_iterations: usize,
    pub pixel_value: f64,
    pub seed: u64,
}

impl Default for OnePixelConfig {
    fn default() -> Self {
        OnePixelConfig {
            num_classes: 4,
            image_size: (8, 8, 1),
            train_samples_per_class: 500,
            test_samples_per_class: 250,
            hidden: vec![100],
            optim: OptimConfig {
                kind: OptimKind::Sgd,
                learning_rate: 0.5,
                momentum: 0.0,
                batch_size: 32,
                epochs: 200,
                seed: 0,
            },
            max_iterations: 2000,
            pixel_value: 1.0,
            seed: 0,
        }
    }
}

/// One row of the GR time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrRecord {
    pub iter: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub grad_norm_causal: f64,
    pub grad_norm_conf: f64,
    pub gr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnePixelResult {
    pub series: Vec<GrRecord>,
    pub train_accuracy: f64,
    /// test images carry no pixel
    pub clean_test_accuracy: f64,
    /// test pixel column drawn independently of the label
    pub independent_test_accuracy: f64,
    pub chance: f64,
    /// first iteration with GR < 1
    pub crossover_iteration: Option<usize>,
}

/// Trains on one-pixel-biased glyphs (bias ratio 1) while logging the
/// gradient ratio of every minibatch, then scores on pixel-free glyphs.
pub fn run_one_pixel_experiment(config: &OnePixelConfig) -> Result<OnePixelResult> {
    let gen = |samples, tag| GeneratorSpec {
        num_classes: config.num_classes,
        image_size: config.image_size,
        samples_per_class: samples,
        seed: derive_seed(config.seed, tag),
        ..GeneratorSpec::default()
    };
    let train_spec = gen(config.train_samples_per_class, "one-pixel-train");
    let test_spec = gen(config.test_samples_per_class, "one-pixel-test");
    train_spec.validate()?;
    test_spec.validate()?;
    let bias = BiasSpec {
        kind: BiasKind::OnePixel,
        bias_ratio: 1.0,
        pixel_value: config.pixel_value,
        ..BiasSpec::default()
    };
    let train = apply_one_pixel_bias(
        &gen_glyphs(&train_spec)?,
        &bias,
        derive_seed(config.seed, "one-pixel-bias"),
    )?;
    let test = gen_glyphs(&test_spec)?;
    let partition = PixelPartition::one_pixel(train.image_shape(), config.num_classes)?;

    let mut series = Vec::new();
    let mut observe = |obs: &StepObservation| -> Result<()> {
        let grad = obs
            .input_grad
            .ok_or_else(|| Error::usage("input gradients not tracked"))?;
        let r = gradient_ratio(grad, &partition)?;
        series.push(GrRecord {
            iter: obs.record.iteration,
            loss: obs.record.loss,
            train_acc: obs.record.accuracy,
            grad_norm_causal: r.causal_norm,
            grad_norm_conf: r.confounding_norm,
            gr: r.gr,
        });
        Ok(())
    };
    let optim = OptimConfig {
        seed: derive_seed(config.seed, "one-pixel-f") ^ config.optim.seed,
        ..config.optim.clone()
    };
    let hooks = TrainHooks {
        observer: Some(&mut observe),
        track_input_grad: true,
        max_iterations: Some(config.max_iterations),
        ..TrainHooks::default()
    };
    let x = train.flatten();
    let trained = train_classifier_with(
        &x,
        &train.labels,
        config.num_classes,
        &config.hidden,
        &optim,
        hooks,
    )?;
    let train_accuracy = accuracy(&trained.params, &x, &train.labels)?;
    let clean_test_accuracy = accuracy(&trained.params, &test.flatten(), &test.labels)?;
    let independent = make_eval_set(
        &test,
        &bias,
        &EvalMode::independent(),
        derive_seed(config.seed, "one-pixel-eval"),
    )?;
    let independent_test_accuracy =
        accuracy(&trained.params, &independent.flatten(), &independent.labels)?;
    let crossover_iteration = series.iter().find(|r| r.gr < 1.0).map(|r| r.iter);
    Ok(OnePixelResult {
        series,
        train_accuracy,
        clean_test_accuracy,
        independent_test_accuracy,
        chance: 1.0 / config.num_classes as f64,
        crossover_iteration,
    })
}

/// CSV with columns `iter,loss,train_acc,grad_norm_causal,grad_norm_conf,gr`.
pub fn write_gr_csv<W: Write>(w: W, series: &[GrRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in series {
        out.serialize(r)
            .map_err(|e| Error::format("gr series", e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("gr series", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_rows() {
        let rows = vec![
            GrRecord {
                iter: 0,
                loss: 1.5,
                train_acc: 0.25,
                grad_norm_causal: 2.0,
                grad_norm_conf: 1.0,
                gr: 2.0,
            },
            GrRecord {
                iter: 1,
                loss: 1.0,
                train_acc: 0.5,
                grad_norm_causal: 1.0,
                grad_norm_conf: 0.0,
                gr: f64::INFINITY,
            },
        ];
        let mut buf = Vec::new();
        write_gr_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "iter,loss,train_acc,grad_norm_causal,grad_norm_conf,gr"
        );
        assert_eq!(lines[1], "0,1.5,0.25,2.0,1.0,2.0");
        assert_eq!(lines[2], "1,1.0,0.5,1.0,0.0,inf");
    }

    #[test]
    fn short_run_logs_contiguous_iterations() {
        let cfg = OnePixelConfig {
            train_samples_per_class: 20,
            test_samples_per_class: 5,
            hidden: vec![8],
            max_iterations: 5,
            optim: OptimConfig {
                batch_size: 16,
                ..OptimConfig::default()
            },
            ..OnePixelConfig::default()
        };
        let r = run_one_pixel_experiment(&cfg).unwrap();
        assert_eq!(r.series.len(), 5);
        assert!(r.series.iter().enumerate().all(|(i, s)| s.iter == i));
    }
}
