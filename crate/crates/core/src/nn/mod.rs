//! Multi-layer perceptrons, classification losses and SGD.

mod loss;
mod optim;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

pub use loss::{cross_entropy, predictive_entropy};
pub use optim::{OptimConfig, OptimKind, Optimizer};
pub use train::{
    accuracy, argmax_rows, predict_logits, train_classifier, train_classifier_with, EpochSummary,
    IterationRecord, StepObservation, TrainHooks, TrainedClassifier,
};

/// One affine layer, `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Layer stack with relu between layers and identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
}

/// Graph handles for a bound parameter set.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
    input_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub dims: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
}

impl MlpParams {
    /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..limit))
                    .collect();
                Linear {
                    weight: Tensor::new(vec![fan_in, fan_out], data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(MlpParams { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(MlpParams {
            layers: dims
                .windows(2)
                .map(|w| Linear {
                    weight: Tensor::zeros(&[w[0], w[1]]),
                    bias: Tensor::zeros(&[w[1]]),
                })
                .collect(),
        })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::usage(format!(
                "mlp needs at least two positive layer sizes, got {dims:?}"
            )));
        }
        Ok(())
    }

    /// Builds from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::usage("mlp without layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            let ws = l.weight.shape();
            if ws.len() != 2 || l.bias.shape() != [ws[1]] {
                return Err(Error::Shape {
                    op: "mlp layer",
                    lhs: ws.to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::numerical(
                    "mlp layer",
                    format!("layer {i} has non-finite parameters"),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.weight.shape()[0] != ws[1] {
                    return Err(Error::Shape {
                        op: "mlp chain",
                        lhs: ws.to_vec(),
                        rhs: next.weight.shape().to_vec(),
                    });
                }
            }
        }
        Ok(MlpParams { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.shape()[1]));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.shape()[1]
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Inserts the parameters into `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundMlp> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok((
                    g.leaf(l.weight.clone(), trainable)?,
                    g.leaf(l.bias.clone(), trainable)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundMlp {
            layers,
            input_dim: self.input_dim(),
        })
    }

    pub fn architecture(&self) -> MlpArchitecture {
        MlpArchitecture {
            dims: self.dims(),
            hidden_activation: "relu".into(),
            output_activation: "identity".into(),
        }
    }

    pub fn write_tensors(&self, prefix: &str, ckpt: &mut Checkpoint) {
        for (i, l) in self.layers.iter().enumerate() {
            ckpt.push(format!("{prefix}layer{i}.weight"), l.weight.clone());
            ckpt.push(format!("{prefix}layer{i}.bias"), l.bias.clone());
        }
    }

    pub fn read_tensors(prefix: &str, num_layers: usize, ckpt: &Checkpoint) -> Result<Self> {
        let layers = (0..num_layers)
            .map(|i| {
                Ok(Linear {
                    weight: ckpt.tensor(&format!("{prefix}layer{i}.weight"))?.clone(),
                    bias: ckpt.tensor(&format!("{prefix}layer{i}.bias"))?.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

impl BoundMlp {
    /// Logits for a `[batch, in]` input.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::usage(format!(
                "mlp expects input [batch, {}], got {:?}",
                self.input_dim, s
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = g.matmul(h, w)?;
            h = g.add(z, b)?;
            if i < last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Binds `params` as constants and runs the forward pass.
pub fn mlp_forward(params: &MlpParams, g: &mut Graph, x: Var) -> Result<Var> {
    params.bind(g, false)?.forward(g, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassifierManifest {
    kind: String,
    architecture: MlpArchitecture,
    optimizer: OptimConfig,
    seed: u64,
    iterations: usize,
    has_momentum_buffers: bool,
}

/// Checkpoint of a trained classifier; the manifest records architecture,
/// optimizer settings, seed and iteration count.
pub fn classifier_checkpoint(trained: &TrainedClassifier, optim: &OptimConfig) -> Checkpoint {
    let manifest = serde_json::to_value(ClassifierManifest {
        kind: "classifier".into(),
        architecture: trained.params.architecture(),
        optimizer: optim.clone(),
        seed: optim.seed,
        iterations: trained.iterations,
        has_momentum_buffers: trained.has_momentum_buffers,
    })
    .expect("manifest serializes");
    let mut ckpt = Checkpoint::new(manifest);
    trained.params.write_tensors("", &mut ckpt);
    ckpt
}

pub fn classifier_from_checkpoint(ckpt: &Checkpoint) -> Result<MlpParams> {
    let m: ClassifierManifest = serde_json::from_value(ckpt.manifest.clone())
        .map_err(|e| Error::format("checkpoint", format!("not a classifier checkpoint: {e}")))?;
    if m.kind != "classifier" {
        return Err(Error::format(
            "checkpoint",
            format!("expected a classifier checkpoint, found '{}'", m.kind),
        ));
    }
    let params = MlpParams::read_tensors("", m.architecture.dims.len() - 1, ckpt)?;
    if params.dims() != m.architecture.dims {
        return Err(Error::format(
            "checkpoint",
            "layer shapes disagree with manifest",
        ));
    }
    Ok(params)
}
