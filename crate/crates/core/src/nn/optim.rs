use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    SgdMomentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            kind: OptimKind::SgdMomentum,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::usage(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Plain or heavy-ball SGD: `v <- μ v + g`, `p <- p - lr v`.
/// Velocity buffers persist across calls.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimKind,
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    /// Accepts `learning_rate == 0`, which leaves parameters in place; the
    /// config-level validation is what enforces `> 0` for training runs.
    pub fn new(config: &OptimConfig) -> Self {
        Optimizer {
            kind: config.kind,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            velocity: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn has_momentum_buffers(&self) -> bool {
        !self.velocity.is_empty()
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&[f64]>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::usage(format!(
                "optimizer got {} parameters and {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            match g {
                None => {
                    return Err(Error::usage(format!("missing gradient for parameter {i}")));
                }
                Some(g) if g.len() != p.len() => {
                    return Err(Error::Shape {
                        op: "optimizer_step",
                        lhs: p.shape().to_vec(),
                        rhs: vec![g.len()],
                    });
                }
                _ => {}
            }
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &gv) in p.data_mut().iter_mut().zip(g.expect("checked")) {
                        *w -= lr * gv;
                    }
                }
            }
            OptimKind::SgdMomentum => {
                if self.velocity.is_empty() {
                    self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
                }
                let mu = self.momentum;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
                    for ((w, &gv), vel) in p.data_mut().iter_mut().zip(g.expect("checked")).zip(v) {
                        *vel = mu * *vel + gv;
                        *w -= lr * *vel;
                    }
                }
            }
        }
        self.steps += 1;
        for p in params.iter() {
            crate::tensor::ensure_finite("optimizer_step", p.data())?;
        }
        Ok(())
    }
}
