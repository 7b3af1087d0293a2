//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value and the ids of its
//! inputs. Inputs always precede their consumers, so walking the node list
//! backwards is a valid reverse topological order and each node is visited
//! exactly once. [`Tape::backward`] takes `&self`: replaying it twice from the
//! same forward state gives identical gradients.

use std::sync::Arc;

use super::{DenseMatrix, SparseMatrix};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (r×c) + b (1×c)` broadcast down the rows.
    AddRow(Var, Var),
    /// `a (r×c) ⊙ g (r×1)` broadcast across the columns.
    ScaleRows(Var, Var),
    /// `a (r×c) + b (r×1)` broadcast across the columns.
    ShiftRows(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    ColMax(Var, Vec<usize>),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Normalize(Var, f64),
    GcnNormalize(Var),
    Sum(Var),
    CrossEntropy(Var, usize),
    MeanRowEntropy(Var),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node on the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<DenseMatrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&DenseMatrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros of the right shape when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> DenseMatrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                DenseMatrix::zeros(r, c)
            }
        }
    }
}

const NORM_EPS: f64 = 1e-12;
const ENTROPY_FLOOR: f64 = 1e-300;

fn shape_err(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Error {
    Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
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

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {op:?}")));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never needs a gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn spmm(&mut self, a: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = a.spmm(self.value(x))?;
        let rg = self.rg(x);
        self.push(value, Op::SpMM(a, x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x + y)
            .map_err(|_| shape_err("add", self.value(a), self.value(b)))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x - y)
            .map_err(|_| shape_err("sub", self.value(a), self.value(b)))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .zip_map(self.value(b), |x, y| x * y)
            .map_err(|_| shape_err("mul", self.value(a), self.value(b)))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(row));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av, bv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(bv.row(0)) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg)
    }

    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, gv) = (self.value(a), self.value(col));
        if gv.cols() != 1 || gv.rows() != av.rows() {
            return Err(shape_err("scale_rows", av, gv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let g = gv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|o| *o *= g);
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::ScaleRows(a, col), rg)
    }

    pub fn shift_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(col));
        if bv.cols() != 1 || bv.rows() != av.rows() {
            return Err(shape_err("shift_rows", av, bv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let b = bv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|o| *o += b);
        }
        let rg = self.rg(a) || self.rg(col);
        self.push(value, Op::ShiftRows(a, col), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut value = av.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    /// Column-wise maximum over rows (`n×d → 1×d`). The first maximal row
    /// receives the subgradient.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() == 0 {
            return Err(Error::shape("col_max", "no rows to pool"));
        }
        let mut argmax = vec![0usize; av.cols()];
        let mut value = DenseMatrix::zeros(1, av.cols());
        for c in 0..av.cols() {
            let mut best = av.get(0, c);
            for r in 1..av.rows() {
                let v = av.get(r, c);
                if v > best {
                    best = v;
                    argmax[c] = r;
                }
            }
            value.set(0, c, best);
        }
        let rg = self.rg(a);
        self.push(value, Op::ColMax(a, argmax), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let mut value = DenseMatrix::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = value.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::ConcatCols(a, b), rg)
    }

    /// Columns `[start, start + width)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if start + width > av.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("columns {start}..{} of {:?}", start + width, av.shape()),
            ));
        }
        let mut value = DenseMatrix::zeros(av.rows(), width);
        for r in 0..av.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + width]);
        }
        let rg = self.rg(a);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= av.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {:?}", av.shape()),
            ));
        }
        let value = av.select_rows(&rows);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, rows), rg)
    }

    /// `a / max(‖a‖_F, 1e-12)`.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let norm = av.frobenius_norm().max(NORM_EPS);
        let value = av.map(|x| x / norm);
        let rg = self.rg(a);
        self.push(value, Op::Normalize(a, norm), rg)
    }

    /// Dense symmetric normalization `D̃^{-1/2}(A + I)D̃^{-1/2}` with `D̃` the
    /// row sums of `A + I`. Requires every row sum of `A + I` to be positive.
    pub fn gcn_normalize(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != av.cols() {
            return Err(Error::shape("gcn_normalize", format!("{:?} not square", av.shape())));
        }
        let n = av.rows();
        let mut value = av.clone();
        for i in 0..n {
            let d = value.get(i, i) + 1.0;
            value.set(i, i, d);
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let d: f64 = value.row(i).iter().sum();
                if d > 0.0 {
                    Ok(1.0 / d.sqrt())
                } else {
                    Err(Error::NonFinite(format!("degree {d} at row {i} in gcn_normalize")))
                }
            })
            .collect::<Result<_>>()?;
        for i in 0..n {
            for j in 0..n {
                let v = value.get(i, j) * inv_sqrt[i] * inv_sqrt[j];
                value.set(i, j, v);
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::GcnNormalize(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = DenseMatrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Softmax cross-entropy of a `1×C` logit row against class `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != 1 || target >= lv.cols() {
            return Err(Error::shape(
                "cross_entropy",
                format!("target {target} for logits {:?}", lv.shape()),
            ));
        }
        let loss = log_sum_exp(lv.row(0)) - lv.get(0, target);
        let rg = self.rg(logits);
        self.push(DenseMatrix::filled(1, 1, loss), Op::CrossEntropy(logits, target), rg)
    }

    /// Mean over rows of the Shannon entropy of each (row-stochastic) row.
    pub fn mean_row_entropy(&mut self, s: Var) -> Result<Var> {
        let sv = self.value(s);
        let n = sv.rows().max(1) as f64;
        let h = -sv
            .as_slice()
            .iter()
            .map(|&p| p * p.max(ENTROPY_FLOOR).ln())
            .sum::<f64>()
            / n;
        let rg = self.rg(s);
        self.push(DenseMatrix::filled(1, 1, h), Op::MeanRowEntropy(s), rg)
    }

    /// Reverse sweep from a `1×1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::shape("backward", format!("output is {:?}, not 1x1", out.shape())));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(DenseMatrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &DenseMatrix, grads: &mut [Option<DenseMatrix>]) -> Result<()> {
        let mut acc = |v: Var, delta: DenseMatrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, g.matmul_t(self.value(*b))?);
                }
                if needs(*b) {
                    acc(*b, self.value(*a).t_matmul(g)?);
                }
            }
            Op::SpMM(sp, x) => acc(*x, sp.spmm_t(g)?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?);
                }
                if needs(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?);
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if needs(*row) {
                    let mut gb = DenseMatrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*row, gb);
                }
            }
            Op::ScaleRows(a, col) => {
                let av = self.value(*a);
                let cv = self.value(*col);
                if needs(*a) {
                    let mut ga = g.clone();
                    for r in 0..ga.rows() {
                        let s = cv.get(r, 0);
                        ga.row_mut(r).iter_mut().for_each(|o| *o *= s);
                    }
                    acc(*a, ga);
                }
                if needs(*col) {
                    let mut gc = DenseMatrix::zeros(cv.rows(), 1);
                    for r in 0..g.rows() {
                        let dot: f64 = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                        gc.set(r, 0, dot);
                    }
                    acc(*col, gc);
                }
            }
            Op::ShiftRows(a, col) => {
                acc(*a, g.clone());
                if needs(*col) {
                    let mut gc = DenseMatrix::zeros(g.rows(), 1);
                    for r in 0..g.rows() {
                        gc.set(r, 0, g.row(r).iter().sum());
                    }
                    acc(*col, gc);
                }
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Relu(a) => {
                acc(*a, g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?);
            }
            Op::Sigmoid(_) | Op::SoftmaxRows(_) | Op::Normalize(..) => {
                self.propagate_normalizing(node, g, &mut acc)?;
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ColMax(a, argmax) => {
                let av = self.value(*a);
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                for (c, &r) in argmax.iter().enumerate() {
                    ga.set(r, c, g.get(0, c));
                }
                acc(*a, ga);
            }
            Op::ConcatCols(a, b) => {
                let wa = self.value(*a).cols();
                let wb = self.value(*b).cols();
                let mut ga = DenseMatrix::zeros(g.rows(), wa);
                let mut gb = DenseMatrix::zeros(g.rows(), wb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..wa]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[wa..]);
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::GatherRows(a, rows) => {
                let av = self.value(*a);
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*a, ga);
            }
            Op::GcnNormalize(a) => {
                let av = self.value(*a);
                let nv = &node.value;
                let n = av.rows();
                let degree: Vec<f64> = (0..n)
                    .map(|i| av.row(i).iter().sum::<f64>() + 1.0)
                    .collect();
                let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
                // dL/dd_i = -(1 / 2d_i) (Σ_l G_il N_il + Σ_k G_ki N_ki)
                let mut g_deg = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let gn = g.get(i, j) * nv.get(i, j);
                        g_deg[i] += gn;
                        g_deg[j] += gn;
                    }
                }
                for i in 0..n {
                    g_deg[i] *= -0.5 / degree[i];
                }
                let mut ga = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        ga.set(i, j, g.get(i, j) * inv_sqrt[i] * inv_sqrt[j] + g_deg[i]);
                    }
                }
                acc(*a, ga);
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, DenseMatrix::filled(r, c, g.get(0, 0)));
            }
            Op::CrossEntropy(logits, target) => {
                let lv = self.value(*logits);
                let mut p = lv.row(0).to_vec();
                softmax_in_place(&mut p);
                p[*target] -= 1.0;
                let scale = g.get(0, 0);
                p.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, DenseMatrix::row_vector(&p));
            }
            Op::MeanRowEntropy(s) => {
                let sv = self.value(*s);
                let n = sv.rows().max(1) as f64;
                let scale = g.get(0, 0);
                acc(*s, sv.map(|p| -scale * (p.max(ENTROPY_FLOOR).ln() + 1.0) / n));
            }
        }
        Ok(())
    }

    /// Backward rules that read the node's own output value.
    fn propagate_normalizing(
        &self,
        node: &Node,
        g: &DenseMatrix,
        acc: &mut impl FnMut(Var, DenseMatrix),
    ) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s))?),
            Op::SoftmaxRows(a) => {
                let mut ga = DenseMatrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, s)| x * s).sum();
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = y.get(r, c) * (g.get(r, c) - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::Normalize(a, norm) => {
                if *norm > NORM_EPS {
                    let dot: f64 = g.as_slice().iter().zip(y.as_slice()).map(|(x, u)| x * u).sum();
                    acc(*a, g.zip_map(y, |gv, u| (gv - u * dot) / norm)?);
                } else {
                    acc(*a, g.map(|gv| gv / norm));
                }
            }
            _ => unreachable!("not a normalizing op"),
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
