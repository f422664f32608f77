//! Reverse-mode differentiation over a linear operation record.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, and [`Tape::backward`] walks them in exact reverse.

use std::sync::Arc;

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, RowMix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    /// Column standardisation with batch statistics; saves `1/σ` per column.
    NormalizeBatch(Var, Vec<f64>),
    /// Column standardisation with frozen statistics.
    NormalizeFixed(Var, Vec<f64>),
    Mix(Var, Arc<RowMix>),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    Mse(Var, Tensor),
    BceLogits(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Column statistics produced by a training-mode normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Tape::backward`], one slot per node.
#[derive(Debug)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Grads {
    /// Gradient for `v`; zeros when `v` did not influence the output.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.slots[v.0] {
            Some(t) => t.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av, bv));
        }
        let out = matmul_raw(av, bv);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::matrix(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, x: Var, r: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (xv, rv) = (self.value(x), self.value(r));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(shape_err(name, xv, rv));
        }
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| f(*v, rv.data()[i % c]))
            .collect();
        Tensor::matrix(xv.rows(), c, data)
    }

    /// `x + row` with `row` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(x, row, "add_row", |a, b| a + b)?;
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    /// `x * row` with `row` broadcast over every row of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.row_broadcast(x, row, "mul_row", |a, b| a * b)?;
        Ok(self.push(out, Op::MulRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    /// `s · x` for a `[1, 1]` node `s`.
    pub fn scale_by(&mut self, s: Var, x: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::Shape("scale_by expects a scalar".into()));
        }
        let c = sv.item();
        let out = self.value(x).map(|v| v * c);
        Ok(self.push(out, Op::ScaleBy(s, x), &[s, x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Standardises each column with statistics over the rows of `x`
    /// (biased variance), returning the statistics alongside.
    pub fn normalize_batch(&mut self, x: Var, eps: f64) -> (Var, ColumnStats) {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = xv.clone();
        for r in 0..n {
            for j in 0..c {
                let v = out.get(r, j);
                out.set(r, j, (v - mean[j]) * inv_std[j]);
            }
        }
        let var_out = self.push(out, Op::NormalizeBatch(x, inv_std), &[x]);
        (var_out, ColumnStats { mean, var })
    }

    /// Standardises columns with fixed statistics.
    pub fn normalize_fixed(&mut self, x: Var, stats: &ColumnStats, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if stats.mean.len() != xv.cols() {
            return Err(Error::Shape("normalisation statistics width".into()));
        }
        let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let c = xv.cols();
        let mut out = xv.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = (*v - stats.mean[j]) * inv_std[j];
        }
        Ok(self.push(out, Op::NormalizeFixed(x, inv_std), &[x]))
    }

    /// Applies a constant row-mixing operator (neighbourhood aggregation).
    pub fn mix(&mut self, mix: Arc<RowMix>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if mix.in_rows() != xv.rows() {
            return Err(Error::Shape(format!(
                "mix expects {} input rows, got {}",
                mix.in_rows(),
                xv.rows()
            )));
        }
        let out = mix.apply(xv);
        Ok(self.push(out, Op::Mix(x, mix), &[x]))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::Shape(format!("row {bad} out of {}", xv.rows())));
        }
        let out = xv.select_rows(&idx);
        Ok(self.push(out, Op::Gather(x, idx), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut off = 0;
            for (p, w) in parts.iter().zip(&widths) {
                out.row_mut(r)[off..off + w].copy_from_slice(self.value(*p).row(r));
                off += w;
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Per-row inner product, giving an `n × 1` column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(shape_err("row_dot", av, bv));
        }
        let vals = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::column(vals), Op::RowDot(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.sum() / xv.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        if !pv.same_shape(&target) {
            return Err(shape_err("mse", pv, &target));
        }
        let n = pv.len().max(1) as f64;
        let l = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(l), Op::Mse(pred, target), &[pred]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against constant targets.
    pub fn bce_with_logits(&mut self, logits: Var, target: Tensor) -> Result<Var> {
        let zv = self.value(logits);
        if !zv.same_shape(&target) {
            return Err(shape_err("bce", zv, &target));
        }
        let n = zv.len().max(1) as f64;
        let l = zv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(l), Op::BceLogits(logits, target), &[logits]))
    }

    /// Back-propagates from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Grads {
        let mut slots: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        slots[output.0] = Some(Tensor::full(1, 1, 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else { continue };
            self.propagate(node, &g, &mut slots);
            slots[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        Grads { slots, shapes }
    }

    fn propagate(&self, node: &Node, g: &Tensor, slots: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut slots[v.0] {
                Some(cur) => {
                    for (c, x) in cur.data_mut().iter_mut().zip(t.data()) {
                        *c += x;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, matmul_nt(g, val(*b)));
                }
                if wants(*b) {
                    acc(*b, matmul_tn(val(*a), g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, zip_with(g, bv, |x, y| x * y));
                acc(*b, zip_with(g, av, |x, y| x * y));
            }
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                acc(*row, column_sums(g));
            }
            Op::MulRow(x, row) => {
                let (xv, rv) = (val(*x), val(*row));
                let c = g.cols();
                let gx = g.data().iter().enumerate().map(|(i, v)| v * rv.data()[i % c]).collect();
                acc(*x, Tensor::matrix(g.rows(), c, gx).expect("shape"));
                acc(*row, column_sums(&zip_with(g, xv, |a, b| a * b)));
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::ScaleBy(s, x) => {
                let (sv, xv) = (val(*s).item(), val(*x));
                let gs: f64 = g.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                acc(*s, Tensor::scalar(gs));
                acc(*x, g.map(|v| v * sv));
            }
            Op::Relu(x) => acc(*x, zip_with(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(x, slope) => acc(
                *x,
                zip_with(g, val(*x), |gv, xv| if xv > 0.0 { gv } else { slope * gv }),
            ),
            Op::Tanh(x) => acc(*x, zip_with(g, &node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(x) => acc(*x, zip_with(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::NormalizeBatch(x, inv_std) => {
                let y = &node.value;
                let (n, c) = (y.rows(), y.cols());
                let mut mean_g = vec![0.0; c];
                let mut mean_gy = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        mean_g[j] += g.get(r, j);
                        mean_gy[j] += g.get(r, j) * y.get(r, j);
                    }
                }
                let nf = n as f64;
                let mut gx = Tensor::zeros(n, c);
                for r in 0..n {
                    for j in 0..c {
                        let v = inv_std[j] * (g.get(r, j) - mean_g[j] / nf - y.get(r, j) * mean_gy[j] / nf);
                        gx.set(r, j, v);
                    }
                }
                acc(*x, gx);
            }
            Op::NormalizeFixed(x, inv_std) => {
                let c = g.cols();
                let gx = g.data().iter().enumerate().map(|(i, v)| v * inv_std[i % c]).collect();
                acc(*x, Tensor::matrix(g.rows(), c, gx).expect("shape"));
            }
            Op::Mix(x, mix) => acc(*x, mix.apply_transpose(g)),
            Op::Gather(x, idx) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = val(*p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    acc(*p, gp);
                    off += w;
                }
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = av.clone();
                let mut gb = bv.clone();
                for r in 0..av.rows() {
                    let gr = g.get(r, 0);
                    for (o, v) in ga.row_mut(r).iter_mut().zip(bv.row(r)) {
                        *o = gr * v;
                    }
                    for (o, v) in gb.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = gr * v;
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Tensor::full(xv.rows(), xv.cols(), g.item()));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let v = g.item() / xv.len().max(1) as f64;
                acc(*x, Tensor::full(xv.rows(), xv.cols(), v));
            }
            Op::Mse(p, t) => {
                let pv = val(*p);
                let k = 2.0 * g.item() / pv.len().max(1) as f64;
                acc(*p, zip_with(pv, t, |a, b| k * (a - b)));
            }
            Op::BceLogits(z, t) => {
                let zv = val(*z);
                let k = g.item() / zv.len().max(1) as f64;
                acc(*z, zip_with(zv, t, |a, b| k * (sigmoid(a) - b)));
            }
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data).expect("zip_with shape")
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

/// Logistic function evaluated without overflow for large `|x|`.
pub fn stable_sigmoid(x: f64) -> f64 {
    sigmoid(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Runs a finite-difference check for a loss built from two random inputs.
    fn check(build: impl Fn(&mut Tape, Var, Var) -> Var, shapes: [(usize, usize); 2]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = vec![
            rand_tensor(&mut rng, shapes[0].0, shapes[0].1),
            rand_tensor(&mut rng, shapes[1].0, shapes[1].1),
        ];
        grad_check(|tape: &mut Tape, v: &[Var]| Ok(build(tape, v[0], v[1])), &params, 1e-5).unwrap()
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros(2, 3));
        let out = tape.scale(a, 3.0);
        let g = tape.backward(out);
        assert_eq!(g.get(a).item(), 3.0);
        assert_eq!(g.get(unused), Tensor::zeros(2, 3));
    }

    #[test]
    fn primitive_gradients_match_finite_differences() {
        let tol = 1e-6;
        let sq = |t: &mut Tape, x: Var| {
            let y = t.mul(x, x).unwrap();
            t.sum(y)
        };
        let cases: Vec<(&str, f64)> = vec![
            (
                "matmul",
                check(
                    |t, a, b| {
                        let m = t.matmul(a, b).unwrap();
                        sq(t, m)
                    },
                    [(3, 4), (4, 2)],
                ),
            ),
            (
                "add",
                check(
                    |t, a, b| {
                        let m = t.add(a, b).unwrap();
                        sq(t, m)
                    },
                    [(3, 2), (3, 2)],
                ),
            ),
            (
                "sub",
                check(
                    |t, a, b| {
                        let m = t.sub(a, b).unwrap();
                        sq(t, m)
                    },
                    [(3, 2), (3, 2)],
                ),
            ),
            (
                "mul",
                check(
                    |t, a, b| {
                        let m = t.mul(a, b).unwrap();
                        sq(t, m)
                    },
                    [(3, 2), (3, 2)],
                ),
            ),
            (
                "add_row",
                check(
                    |t, a, b| {
                        let m = t.add_row(a, b).unwrap();
                        sq(t, m)
                    },
                    [(4, 3), (1, 3)],
                ),
            ),
            (
                "mul_row",
                check(
                    |t, a, b| {
                        let m = t.mul_row(a, b).unwrap();
                        sq(t, m)
                    },
                    [(4, 3), (1, 3)],
                ),
            ),
            (
                "scale_by",
                check(
                    |t, s, x| {
                        let m = t.scale_by(s, x).unwrap();
                        sq(t, m)
                    },
                    [(1, 1), (3, 3)],
                ),
            ),
            (
                "leaky",
                check(
                    |t, a, b| {
                        let m = t.mul(a, b).unwrap();
                        let l = t.leaky_relu(m, 0.2);
                        sq(t, l)
                    },
                    [(3, 3), (3, 3)],
                ),
            ),
            (
                "tanh",
                check(
                    |t, a, b| {
                        let m = t.add(a, b).unwrap();
                        let l = t.tanh(m);
                        sq(t, l)
                    },
                    [(3, 3), (3, 3)],
                ),
            ),
            (
                "sigmoid",
                check(
                    |t, a, b| {
                        let m = t.add(a, b).unwrap();
                        let l = t.sigmoid(m);
                        sq(t, l)
                    },
                    [(3, 3), (3, 3)],
                ),
            ),
            (
                "normalize",
                check(
                    |t, a, b| {
                        let m = t.mul(a, b).unwrap();
                        let (l, _) = t.normalize_batch(m, 1e-5);
                        let w = t.mul(l, b).unwrap();
                        t.sum(w)
                    },
                    [(5, 3), (5, 3)],
                ),
            ),
            (
                "gather",
                check(
                    |t, a, b| {
                        let m = t.gather_rows(a, vec![2, 0, 2, 1]).unwrap();
                        let p = t.mul(m, b).unwrap();
                        sq(t, p)
                    },
                    [(3, 2), (4, 2)],
                ),
            ),
            (
                "concat",
                check(
                    |t, a, b| {
                        let m = t.concat_cols(&[a, b, a]).unwrap();
                        let s = t.tanh(m);
                        sq(t, s)
                    },
                    [(3, 2), (3, 1)],
                ),
            ),
            (
                "row_dot",
                check(
                    |t, a, b| {
                        let m = t.row_dot(a, b).unwrap();
                        sq(t, m)
                    },
                    [(4, 3), (4, 3)],
                ),
            ),
            (
                "mean",
                check(
                    |t, a, b| {
                        let m = t.mul(a, b).unwrap();
                        t.mean(m)
                    },
                    [(4, 3), (4, 3)],
                ),
            ),
            (
                "mse",
                check(
                    |t, a, b| {
                        let m = t.mul(a, b).unwrap();
                        t.mse(m, Tensor::full(4, 3, 0.3)).unwrap()
                    },
                    [(4, 3), (4, 3)],
                ),
            ),
            (
                "bce",
                check(
                    |t, a, b| {
                        let m = t.add(a, b).unwrap();
                        let tgt = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
                        t.bce_with_logits(m, tgt).unwrap()
                    },
                    [(2, 3), (2, 3)],
                ),
            ),
            (
                "mix",
                check(
                    |t, a, b| {
                        let mix = Arc::new(RowMix::from_rows(
                            3,
                            vec![vec![(0, 0.5), (2, 1.5)], vec![], vec![(1, -1.0)]],
                        ));
                        let m = t.mix(mix, a).unwrap();
                        let p = t.mul(m, b).unwrap();
                        sq(t, p)
                    },
                    [(3, 2), (3, 2)],
                ),
            ),
        ];
        for (name, err) in cases {
            assert!(err < tol, "{name}: relative error {err}");
        }
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let params = vec![Tensor::from_rows(&[vec![0.5, -0.7], vec![1.2, -0.1]]).unwrap()];
        let err = grad_check(
            |t: &mut Tape, v: &[Var]| {
                let r = t.relu(v[0]);
                let s = t.mul(r, r)?;
                Ok(t.sum(s))
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8);
    }

    #[test]
    fn batch_normalisation_standardises_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(rand_tensor(&mut rng, 50, 4).map(|v| 3.0 * v + 2.0));
        let (y, _) = tape.normalize_batch(x, 0.0);
        let yv = tape.value(y).clone();
        for j in 0..4 {
            let col: Vec<f64> = (0..50).map(|r| yv.get(r, j)).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-8);
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_of_bce_is_finite_for_extreme_logits() {
        let mut tape = Tape::new();
        let z = tape.param(Tensor::column(vec![800.0, -800.0]));
        let l = tape.bce_with_logits(z, Tensor::column(vec![0.0, 1.0])).unwrap();
        assert!(tape.value(l).item().is_finite());
        assert!(tape.backward(l).get(z).is_finite());
    }
}
