use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, MlpParams, OptimConfig, Optimizer};
use crate::error::{Error, Result};
use crate::rng::{rng_for, Rng};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
    /// accuracy on the minibatch, measured before the update
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub params: MlpParams,
    pub history: Vec<IterationRecord>,
    pub epochs: Vec<EpochSummary>,
    pub iterations: usize,
    pub has_momentum_buffers: bool,
}

/// What an observer sees after each minibatch update is computed
/// (gradients are from the pre-update parameters).
pub struct StepObservation<'a> {
    pub record: &'a IterationRecord,
    /// ∂loss/∂input for the batch, when input gradients are tracked
    pub input_grad: Option<&'a [f64]>,
    pub batch: &'a Tensor,
}

pub type Augment<'a> = &'a dyn Fn(&Tensor, &mut Rng) -> Result<Tensor>;
pub type Observer<'a> = &'a mut dyn FnMut(&StepObservation) -> Result<()>;

#[derive(Default)]
pub struct TrainHooks<'a> {
    pub augment: Option<Augment<'a>>,
    pub observer: Option<Observer<'a>>,
    pub track_input_grad: bool,
    /// stop after this many minibatch updates
    pub max_iterations: Option<usize>,
}

pub fn train_classifier(
    inputs: &Tensor,
    labels: &[usize],
    num_classes: usize,
    hidden: &[usize],
    config: &OptimConfig,
) -> Result<TrainedClassifier> {
    train_classifier_with(
        inputs,
        labels,
        num_classes,
        hidden,
        config,
        TrainHooks::default(),
    )
}

/// Minibatch training of an MLP classifier on `[n, features]` inputs.
/// Initialisation, shuffling and augmentation each draw from their own
/// stream derived from `config.seed`.
pub fn train_classifier_with(
    inputs: &Tensor,
    labels: &[usize],
    num_classes: usize,
    hidden: &[usize],
    config: &OptimConfig,
    mut hooks: TrainHooks<'_>,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if inputs.rank() != 2 {
        return Err(Error::usage(format!(
            "classifier inputs must be [n, features], got {:?}",
            inputs.shape()
        )));
    }
    let n = inputs.shape()[0];
    if n == 0 || labels.len() != n {
        return Err(Error::usage(format!(
            "{} labels for {n} examples",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::usage(format!(
            "label {bad} outside [0, {num_classes})"
        )));
    }
    let mut dims = vec![inputs.shape()[1]];
    dims.extend_from_slice(hidden);
    dims.push(num_classes);

    let mut params = MlpParams::init(&dims, &mut rng_for(config.seed, "init"))?;
    let mut shuffle_rng = rng_for(config.seed, "shuffle");
    let mut augment_rng = rng_for(config.seed, "augment");
    let mut opt = Optimizer::new(config);
    let mut history = Vec::new();
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    let mut iteration = 0usize;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut seen, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if hooks.max_iterations.is_some_and(|m| iteration >= m) {
                break 'epochs;
            }
            let mut batch = inputs.select_leading(chunk)?;
            if let Some(aug) = hooks.augment {
                batch = aug(&batch, &mut augment_rng)?;
            }
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let mut g = Graph::new();
            let x = g.leaf(batch.clone(), hooks.track_input_grad)?;
            let bound = params.bind(&mut g, true)?;
            let step = (|| {
                let logits = bound.forward(&mut g, x)?;
                let loss = cross_entropy(&mut g, logits, &batch_labels)?;
                g.backward(loss)?;
                Ok::<_, Error>((logits, loss))
            })();
            let (logits, loss) = step.map_err(|e| at_iteration(e, iteration))?;
            let loss_value = g.value(loss).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::numerical(
                    format!("training iteration {iteration}"),
                    "loss diverged",
                ));
            }
            let preds = argmax_rows(g.value(logits));
            let batch_correct = preds
                .iter()
                .zip(&batch_labels)
                .filter(|(p, l)| p == l)
                .count();
            let record = IterationRecord {
                iteration,
                epoch,
                loss: loss_value,
                accuracy: batch_correct as f64 / chunk.len() as f64,
            };
            if let Some(obs) = hooks.observer.as_mut() {
                obs(&StepObservation {
                    record: &record,
                    input_grad: g.grad(x),
                    batch: &batch,
                })?;
            }
            let grads: Vec<Option<&[f64]>> = bound.vars().into_iter().map(|v| g.grad(v)).collect();
            opt.step(&mut params.tensors_mut(), &grads)
                .map_err(|e| at_iteration(e, iteration))?;

            loss_sum += loss_value;
            correct += batch_correct;
            seen += chunk.len();
            batches += 1;
            history.push(record);
            iteration += 1;
        }
        if batches > 0 {
            epochs.push(EpochSummary {
                epoch,
                mean_loss: loss_sum / batches as f64,
                accuracy: correct as f64 / seen as f64,
            });
        }
    }
    Ok(TrainedClassifier {
        params,
        history,
        epochs,
        iterations: iteration,
        has_momentum_buffers: opt.has_momentum_buffers(),
    })
}

fn at_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numerical { detail, .. } => {
            Error::numerical(format!("training iteration {iteration}"), detail)
        }
        other => other,
    }
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    logits
        .data()
        .chunks(logits.cols())
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Forward pass without gradient tracking, in chunks of 256 rows.
pub fn predict_logits(params: &MlpParams, inputs: &Tensor) -> Result<Tensor> {
    if inputs.rank() != 2 || inputs.shape()[1] != params.input_dim() {
        return Err(Error::usage(format!(
            "classifier expects [n, {}] inputs, got {:?}",
            params.input_dim(),
            inputs.shape()
        )));
    }
    let n = inputs.shape()[0];
    let c = params.output_dim();
    let mut out = Vec::with_capacity(n * c);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(256) {
        let mut g = Graph::new();
        let x = g.constant(inputs.select_leading(chunk)?)?;
        let y = super::mlp_forward(params, &mut g, x)?;
        out.extend_from_slice(g.value(y).data());
    }
    Tensor::new(vec![n, c], out)
}

/// Fraction of argmax-correct predictions.
pub fn accuracy(params: &MlpParams, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::usage("accuracy on an empty dataset"));
    }
    let preds = argmax_rows(&predict_logits(params, inputs)?);
    if preds.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} labels for {} inputs",
            labels.len(),
            preds.len()
        )));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64)
}
