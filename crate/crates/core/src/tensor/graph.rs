use std::sync::atomic::{AtomicU64, Ordering};

use super::{ensure_finite, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of a particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Log(usize),
    Exp(usize),
    Square(usize),
    Scale(usize, f64),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        input: usize,
        axis: usize,
        start: usize,
    },
    Reshape(usize),
    GatherRows {
        table: usize,
        indices: Vec<usize>,
    },
    Pick {
        input: usize,
        cols: Vec<usize>,
    },
    StraightThrough {
        continuous: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Define-by-run computation graph. Node inputs always precede the node,
/// so the insertion order is a topological order.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[c * 4 + l] * b[c * 4 + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::usage(
                "variable does not belong to the active graph".to_string(),
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, name: &str, op: Op, value: Tensor, inputs: &[usize]) -> Result<Var> {
        ensure_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Inserts an input tensor. Gradients are only tracked for leaves created
    /// with `requires_grad = true` and everything computed from them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        ensure_finite("leaf", value.data())?;
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            grad: None,
        });
        Ok(Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Shorthand for a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.check(v).expect("foreign variable")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.check(v).expect("foreign variable")].requires_grad
    }

    /// Gradient of the last backward pass, if the node received one.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let i = self.check(v).ok()?;
        self.nodes[i].grad.as_deref()
    }

    /// Copies a node's value into a new leaf with no gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let i = self.check(v)?;
        let value = self.nodes[i].value.clone();
        self.leaf(value, false)
    }

    fn same_shape(&self, name: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
        if sa != sb {
            return Err(Error::Shape {
                op: name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: usize, b: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = &self.nodes[a].value;
        let vb = &self.nodes[b].value;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("shape preserved")
    }

    fn unary(&mut self, name: &str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.map(f);
        self.push(name, op, value, &[ia])
    }

    /// Elementwise addition. A rank-1 right operand whose length equals the
    /// last axis of the left operand is broadcast over its rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let sa = self.nodes[ia].value.shape().to_vec();
        let sb = self.nodes[ib].value.shape().to_vec();
        if sa == sb {
            let value = self.zip_map(ia, ib, |x, y| x + y);
            return self.push("add", Op::Add(ia, ib), value, &[ia, ib]);
        }
        if sb.len() == 1 && sa.last() == Some(&sb[0]) {
            let n = sb[0];
            let bias = self.nodes[ib].value.data();
            let mut out = self.nodes[ia].value.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
            return self.push("add", Op::AddRow(ia, ib), out, &[ia, ib]);
        }
        Err(Error::Shape {
            op: "add",
            lhs: sa,
            rhs: sb,
        })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("sub", ia, ib)?;
        let value = self.zip_map(ia, ib, |x, y| x - y);
        self.push("sub", Op::Sub(ia, ib), value, &[ia, ib])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul", ia, ib)?;
        let value = self.zip_map(ia, ib, |x, y| x * y);
        self.push("mul", Op::Mul(ia, ib), value, &[ia, ib])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let sa = self.nodes[ia].value.shape();
        let sb = self.nodes[ib].value.shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            &mut out,
            m,
            k,
            n,
        );
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", Op::MatMul(ia, ib), value, &[ia, ib])
    }

    /// Rectified linear unit; the subgradient at zero is zero.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("relu", a, Op::Relu(ia), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("sigmoid", a, Op::Sigmoid(ia), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("log", a, Op::Log(ia), f64::ln)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("exp", a, Op::Exp(ia), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("square", a, Op::Square(ia), |x| x * x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.check(a)?;
        self.unary("scale", a, Op::Scale(ia, c), |x| c * x)
    }

    fn row_softmax(value: &Tensor, log: bool) -> Tensor {
        let n = value.cols();
        let mut out = value.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v -= max;
                z += v.exp();
            }
            if log {
                let lz = z.ln();
                row.iter_mut().for_each(|v| *v -= lz);
            } else {
                row.iter_mut().for_each(|v| *v = v.exp() / z);
            }
        }
        out
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Self::row_softmax(&self.nodes[ia].value, false);
        self.push("softmax", Op::Softmax(ia), value, &[ia])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let value = Self::row_softmax(&self.nodes[ia].value, true);
        self.push("log_softmax", Op::LogSoftmax(ia), value, &[ia])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        self.push("sum", Op::Sum(ia), Tensor::scalar(s), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Op::Mean(ia), Tensor::scalar(s), &[ia])
    }

    /// Sums over the last axis; `[.., n]` becomes `[..]` (rank-1 input gives `[1]`).
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        let data: Vec<f64> = v.data().chunks(v.cols()).map(|r| r.iter().sum()).collect();
        let shape = if v.rank() > 1 {
            v.shape()[..v.rank() - 1].to_vec()
        } else {
            vec![1]
        };
        let value = Tensor::new(shape, data)?;
        self.push("sum_rows", Op::SumRows(ia), value, &[ia])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let ids = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let first = ids
            .first()
            .map(|&i| self.nodes[i].value.shape().to_vec())
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        if axis >= first.len() {
            return Err(Error::usage(format!(
                "concat axis {axis} out of range for shape {first:?}"
            )));
        }
        let mut total = 0;
        for &i in &ids {
            let s = self.nodes[i].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &i in &ids {
                let v = &self.nodes[i].value;
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push(
            "concat",
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            value,
            &ids,
        )
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let shape = self.nodes[ia].value.shape().to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Shape {
                op: "slice",
                lhs: shape,
                rhs: vec![axis, start, len],
            });
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let src = self.nodes[ia].value.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        self.push(
            "slice",
            Op::Slice {
                input: ia,
                axis,
                start,
            },
            value,
            &[ia],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let value = self.nodes[ia].value.clone().reshape(shape.to_vec())?;
        self.push("reshape", Op::Reshape(ia), value, &[ia])
    }

    /// Row lookup into a `[k, d]` table; gradients scatter-add back.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let t = &self.nodes[it].value;
        if t.rank() != 2 {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        let (k, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= k {
                return Err(Error::usage(format!("gather index {i} >= table rows {k}")));
            }
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![indices.len().max(1), d], data)?;
        self.push(
            "gather_rows",
            Op::GatherRows {
                table: it,
                indices: indices.to_vec(),
            },
            value,
            &[it],
        )
    }

    /// Selects `a[r, cols[r]]` for every row of a 2-D tensor.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let ia = self.check(a)?;
        let v = &self.nodes[ia].value;
        if v.rank() != 2 || v.shape()[0] != cols.len() {
            return Err(Error::Shape {
                op: "pick",
                lhs: v.shape().to_vec(),
                rhs: vec![cols.len()],
            });
        }
        let n = v.shape()[1];
        let mut data = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::usage(format!("pick column {c} >= width {n}")));
            }
            data.push(v.data()[r * n + c]);
        }
        let value = Tensor::new(vec![cols.len()], data)?;
        self.push(
            "pick",
            Op::Pick {
                input: ia,
                cols: cols.to_vec(),
            },
            value,
            &[ia],
        )
    }

    /// Forward value of `quantized`, gradient copied unchanged to `continuous`.
    pub fn straight_through(&mut self, continuous: Var, quantized: Var) -> Result<Var> {
        let (ic, iq) = (self.check(continuous)?, self.check(quantized)?);
        self.same_shape("straight_through", ic, iq)?;
        let value = self.nodes[iq].value.clone();
        self.push(
            "straight_through",
            Op::StraightThrough { continuous: ic },
            value,
            &[ic],
        )
    }

    /// Populates gradients of `loss` (a one-element tensor) for every node
    /// that requires them. Gradients from previous passes are cleared.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.check(loss)?;
        if self.nodes[il].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[il].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[il].requires_grad {
            return Ok(());
        }
        self.nodes[il].grad = Some(vec![1.0]);
        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            self.propagate(i, &g);
            self.nodes[i].grad = Some(g);
        }
        for n in &self.nodes {
            if let Some(g) = &n.grad {
                ensure_finite("backward", g)?;
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, f: impl FnOnce(&[Node], &mut [f64])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let len = self.nodes[target].value.len();
        let mut gt = self.nodes[target]
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; len]);
        f(&self.nodes, &mut gt);
        self.nodes[target].grad = Some(gt);
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_into(a, g, 1.0);
                self.add_into(b, g, 1.0);
            }
            Op::AddRow(a, b) => {
                self.add_into(a, g, 1.0);
                let n = self.nodes[b].value.len();
                self.accumulate(b, |_, gb| {
                    for row in g.chunks(n) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Sub(a, b) => {
                self.add_into(a, g, 1.0);
                self.add_into(b, g, -1.0);
            }
            Op::Mul(a, b) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(nodes[b].value.data()) {
                        *o += gv * bv;
                    }
                });
                self.accumulate(b, |nodes, gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o += gv * av;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = (
                    self.nodes[a].value.shape()[0],
                    self.nodes[a].value.shape()[1],
                );
                let n = self.nodes[b].value.shape()[1];
                self.accumulate(a, |nodes, ga| {
                    let bd = nodes[b].value.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] += dot(grow, &bd[p * n..(p + 1) * n]);
                        }
                    }
                });
                self.accumulate(b, |nodes, gb| {
                    let ad = nodes[a].value.data();
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = ad[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                });
            }
            Op::Relu(a) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        if x > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &s) in ga.iter_mut().zip(g).zip(nodes[i].value.data()) {
                        *o += gv * s * (1.0 - s);
                    }
                });
            }
            Op::Softmax(a) => {
                let n = self.nodes[i].value.cols();
                self.accumulate(a, |nodes, ga| {
                    let y = nodes[i].value.data();
                    for ((grow, yrow), orow) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, &gv), &p) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += p * (gv - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let n = self.nodes[i].value.cols();
                self.accumulate(a, |nodes, ga| {
                    let y = nodes[i].value.data();
                    for ((grow, yrow), orow) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let s: f64 = grow.iter().sum();
                        for ((o, &gv), &lp) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += gv - lp.exp() * s;
                        }
                    }
                });
            }
            Op::Log(a) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o += gv / x;
                    }
                });
            }
            Op::Exp(a) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &e) in ga.iter_mut().zip(g).zip(nodes[i].value.data()) {
                        *o += gv * e;
                    }
                });
            }
            Op::Square(a) => {
                self.accumulate(a, |nodes, ga| {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o += 2.0 * x * gv;
                    }
                });
            }
            Op::Scale(a, c) => self.add_into(a, g, c),
            Op::Sum(a) => {
                let gv = g[0];
                self.accumulate(a, |_, ga| ga.iter_mut().for_each(|o| *o += gv));
            }
            Op::Mean(a) => {
                let gv = g[0] / self.nodes[a].value.len() as f64;
                self.accumulate(a, |_, ga| ga.iter_mut().for_each(|o| *o += gv));
            }
            Op::SumRows(a) => {
                let n = self.nodes[a].value.cols();
                self.accumulate(a, |_, ga| {
                    for (row, &gv) in ga.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|o| *o += gv);
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = self.nodes[i].value.shape().to_vec();
                let (outer, total, inner) = axis_split(&shape, axis);
                let mut offset = 0;
                for inp in inputs {
                    let alen = self.nodes[inp].value.shape()[axis];
                    let block = alen * inner;
                    self.accumulate(inp, |_, gi| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            for (t, &gv) in gi[o * block..(o + 1) * block]
                                .iter_mut()
                                .zip(&g[src..src + block])
                            {
                                *t += gv;
                            }
                        }
                    });
                    offset += alen;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.nodes[input].value.shape().to_vec();
                let len = self.nodes[i].value.shape()[axis];
                let (outer, alen, inner) = axis_split(&in_shape, axis);
                self.accumulate(input, |_, gi| {
                    for o in 0..outer {
                        let dst = o * alen * inner + start * inner;
                        let src = o * len * inner;
                        for (t, &gv) in gi[dst..dst + len * inner]
                            .iter_mut()
                            .zip(&g[src..src + len * inner])
                        {
                            *t += gv;
                        }
                    }
                });
            }
            Op::Reshape(a) => self.add_into(a, g, 1.0),
            Op::GatherRows { table, indices } => {
                let d = self.nodes[table].value.shape()[1];
                self.accumulate(table, |_, gt| {
                    for (r, &idx) in indices.iter().enumerate() {
                        for (t, &gv) in gt[idx * d..(idx + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                        {
                            *t += gv;
                        }
                    }
                });
            }
            Op::Pick { input, cols } => {
                let n = self.nodes[input].value.shape()[1];
                self.accumulate(input, |_, gi| {
                    for (r, &c) in cols.iter().enumerate() {
                        gi[r * n + c] += g[r];
                    }
                });
            }
            Op::StraightThrough { continuous } => self.add_into(continuous, g, 1.0),
        }
    }

    fn add_into(&mut self, target: usize, g: &[f64], c: f64) {
        self.accumulate(target, |_, gt| {
            for (t, &gv) in gt.iter_mut().zip(g) {
                *t += c * gv;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
        let b = g.constant(t(&[2, 1], &[1., 1.])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3., 7.]);
    }

    #[test]
    fn relu_and_softmax_values() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1., 0., 2.])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).data(), &[0., 0., 2.]);
        let z = g.constant(Tensor::zeros(&[3])).unwrap();
        let s = g.softmax(z).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 3], &[1e6, 0.0, -1e6])).unwrap();
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(g.mul(a, c).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[0.0, 1.0])).unwrap();
        assert!(matches!(g.log(x), Err(Error::Numerical { .. })));
        let y = g.constant(t(&[1], &[1000.0])).unwrap();
        assert!(matches!(g.exp(y), Err(Error::Numerical { .. })));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1., 2., 3.]), true).unwrap();
        let sq = g.square(x).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2., 4., 6.]);
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1., 2.]), true).unwrap();
        let y = g.leaf(t(&[2], &[3., 4.]), true).unwrap();
        let p = g.mul(x, y).unwrap();
        let l = g.sum(p).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[3., 4.]);
        assert_eq!(g.grad(y).unwrap(), &[1., 2.]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1], &[3.0]), true).unwrap();
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let l = g.sum(z).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn backward_rejects_foreign_and_non_scalar() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.leaf(Tensor::zeros(&[2]), true).unwrap();
        let l = g1.sum(x).unwrap();
        assert!(matches!(g2.backward(l), Err(Error::Usage(_))));
        assert!(matches!(g1.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_get_no_grad() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1., 2.]), true).unwrap();
        let c = g.constant(t(&[2], &[5., 5.])).unwrap();
        let p = g.mul(x, c).unwrap();
        let l = g.sum(p).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).is_none());
        assert!(!g.requires_grad(c));
    }

    #[test]
    fn concat_slice_roundtrip_routes_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1., 2., 3., 4.]), true).unwrap();
        let b = g.leaf(t(&[2, 1], &[5., 6.]), true).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 5., 3., 4., 6.]);
        let s = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2., 5., 4., 6.]);
        let l = g.sum(s).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0., 1., 0., 1.]);
        assert_eq!(g.grad(b).unwrap(), &[1., 1.]);
    }

    #[test]
    fn straight_through_copies_gradient() {
        let mut g = Graph::new();
        let c = g.leaf(t(&[2], &[0.1, 0.2]), true).unwrap();
        let q = g.constant(t(&[2], &[1.0, -1.0])).unwrap();
        let st = g.straight_through(c, q).unwrap();
        assert_eq!(g.value(st).data(), &[1.0, -1.0]);
        let sq = g.square(st).unwrap();
        let l = g.sum(sq).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(c).unwrap(), &[2.0, -2.0]);
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let mut g = Graph::new();
        let table = g.leaf(t(&[3, 2], &[0., 1., 2., 3., 4., 5.]), true).unwrap();
        let rows = g.gather_rows(table, &[2, 2, 0]).unwrap();
        assert_eq!(g.value(rows).data(), &[4., 5., 4., 5., 0., 1.]);
        let l = g.sum(rows).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1., 1., 0., 0., 2., 2.]);
    }
}
