#![allow(dead_code)]

use ladlab::rng::rng_for;
use ladlab::{Graph, Result, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
enum Unary {
    Sigmoid,
    Relu,
    Exp,
    Square,
    Scale(f64),
    LogSigmoid,
    Softmax,
    LogSoftmax,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Step {
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    AddRow(usize, Tensor),
    MatMul(usize, Tensor),
    ConcatSlice(usize, usize, usize),
    Flatten(usize),
}

/// A seeded random scalar function of a `[rows, cols]` input, built from
/// every differentiable graph op.
#[derive(Debug, Clone)]
pub struct RandomProgram {
    pub rows: usize,
    pub cols: usize,
    steps: Vec<Step>,
    readout: Tensor,
    pub point: Tensor,
}

fn normal(rng: &mut impl rand::Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect::<Vec<f64>>()
}

impl RandomProgram {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "random-program");
        let rows = rng.random_range(1..=3);
        let cols = rng.random_range(2..=4);
        let n_steps = rng.random_range(3..=8);
        let mut steps = Vec::with_capacity(n_steps);
        for k in 0..n_steps {
            let pool = k + 1;
            let a = rng.random_range(0..pool);
            let b = rng.random_range(0..pool);
            let step = match rng.random_range(0..12) {
                0 => Step::Unary(Unary::Sigmoid, a),
                1 => Step::Unary(Unary::Relu, a),
                2 => Step::Unary(Unary::Exp, a),
                3 => Step::Unary(Unary::Square, a),
                4 => Step::Unary(Unary::Scale(rng.random_range(-1.5..1.5)), a),
                5 => Step::Unary(Unary::LogSigmoid, a),
                6 => Step::Unary(
                    if rng.random() {
                        Unary::Softmax
                    } else {
                        Unary::LogSoftmax
                    },
                    a,
                ),
                7 => Step::Binary(
                    [Binary::Add, Binary::Sub, Binary::Mul][rng.random_range(0..3)],
                    a,
                    b,
                ),
                8 => Step::AddRow(
                    a,
                    Tensor::new(vec![cols], normal(&mut rng, cols, 0.5)).unwrap(),
                ),
                9 => Step::MatMul(
                    a,
                    Tensor::new(vec![cols, cols], normal(&mut rng, cols * cols, 0.5)).unwrap(),
                ),
                10 => Step::ConcatSlice(a, b, rng.random_range(0..=cols)),
                _ => Step::Flatten(a),
            };
            steps.push(step);
        }
        let readout = Tensor::new(vec![rows, cols], normal(&mut rng, rows * cols, 1.0)).unwrap();
        let point = Tensor::new(vec![rows * cols], normal(&mut rng, rows * cols, 1.0)).unwrap();
        RandomProgram {
            rows,
            cols,
            steps,
            readout,
            point,
        }
    }

    pub fn eval(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (r, c) = (self.rows, self.cols);
        let mut pool = vec![g.reshape(x, &[r, c])?];
        for step in &self.steps {
            let v = match step {
                Step::Unary(op, a) => {
                    let a = pool[*a];
                    match op {
                        Unary::Sigmoid => g.sigmoid(a)?,
                        Unary::Relu => g.relu(a)?,
                        Unary::Exp => {
                            let s = g.sigmoid(a)?;
                            g.exp(s)?
                        }
                        Unary::Square => g.square(a)?,
                        Unary::Scale(k) => g.scale(a, *k)?,
                        Unary::LogSigmoid => {
                            let s = g.sigmoid(a)?;
                            g.log(s)?
                        }
                        Unary::Softmax => g.softmax(a)?,
                        Unary::LogSoftmax => g.log_softmax(a)?,
                    }
                }
                Step::Binary(op, a, b) => match op {
                    Binary::Add => g.add(pool[*a], pool[*b])?,
                    Binary::Sub => g.sub(pool[*a], pool[*b])?,
                    Binary::Mul => g.mul(pool[*a], pool[*b])?,
                },
                Step::AddRow(a, bias) => {
                    let b = g.constant(bias.clone())?;
                    g.add(pool[*a], b)?
                }
                Step::MatMul(a, w) => {
                    let w = g.constant(w.clone())?;
                    g.matmul(pool[*a], w)?
                }
                Step::ConcatSlice(a, b, start) => {
                    let joined = g.concat(&[pool[*a], pool[*b]], 1)?;
                    g.slice(joined, 1, *start, c)?
                }
                Step::Flatten(a) => {
                    let flat = g.reshape(pool[*a], &[r * c])?;
                    g.reshape(flat, &[r, c])?
                }
            };
            pool.push(v);
        }
        let last = *pool.last().expect("pool starts non-empty");
        let w = g.constant(self.readout.clone())?;
        let weighted = g.mul(last, w)?;
        let head = g.sum(weighted)?;
        let sq = g.square(pool[pool.len() / 2])?;
        let tail = g.mean(sq)?;
        let rows = g.sum_rows(pool[1])?;
        let rows = g.sum(rows)?;
        let rows = g.scale(rows, 0.1)?;
        let s = g.add(head, tail)?;
        g.add(s, rows)
    }

    pub fn gradient(&self, point: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.leaf(point.clone(), true)?;
        let out = self.eval(&mut g, x)?;
        g.backward(out)?;
        Ok(g.grad(x)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; point.len()]))
    }
}

/// Cross-entropy of a relu MLP `[4, 5, 3]` as a function of its flattened
/// parameters, on a fixed batch of six examples.
pub struct MlpLoss {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub point: Tensor,
}

pub const MLP_DIMS: [usize; 3] = [4, 5, 3];

impl MlpLoss {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "mlp-fd");
        let [i, h, o] = MLP_DIMS;
        let n_params = i * h + h + h * o + o;
        MlpLoss {
            inputs: Tensor::new(vec![6, i], normal(&mut rng, 6 * i, 1.0)).unwrap(),
            labels: (0..6).map(|_| rng.random_range(0..o)).collect(),
            point: Tensor::new(vec![n_params], normal(&mut rng, n_params, 0.5)).unwrap(),
        }
    }

    pub fn eval(&self, g: &mut Graph, theta: Var) -> Result<Var> {
        let [i, h, o] = MLP_DIMS;
        let mut at = 0;
        let mut take = |g: &mut Graph, shape: &[usize]| -> Result<Var> {
            let len: usize = shape.iter().product();
            let s = g.slice(theta, 0, at, len)?;
            at += len;
            g.reshape(s, shape)
        };
        let w1 = take(g, &[i, h])?;
        let b1 = take(g, &[h])?;
        let w2 = take(g, &[h, o])?;
        let b2 = take(g, &[o])?;
        let x = g.constant(self.inputs.clone())?;
        let z = g.matmul(x, w1)?;
        let z = g.add(z, b1)?;
        let a = g.relu(z)?;
        let z2 = g.matmul(a, w2)?;
        let logits = g.add(z2, b2)?;
        ladlab::nn::cross_entropy(g, logits, &self.labels)
    }
}
