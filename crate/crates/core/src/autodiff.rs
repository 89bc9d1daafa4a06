//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar output with respect to every node that requires one. Parameters
//! live in a [`ParamStore`] and are bound to a tape with [`Tape::param`];
//! frozen tensors enter through [`Tape::constant`] and never receive
//! gradients.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Named collection of model tensors.
///
/// `version` increases on every mutation so derived caches can detect staleness.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on duplicate names, which is a programming error.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.entries.len());
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, trainable });
        self.version += 1;
        id
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.version += 1;
        &mut self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) {
        assert_eq!(self.entries[id.0].value.dim(), value.dim(), "shape change for {}", self.entries[id.0].name);
        self.version += 1;
        self.entries[id.0].value = value;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Matrix),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    SegmentMean(Var, usize),
    SegmentMax(Var, usize, Vec<usize>),
    SegmentMatMul(Var, Matrix),
    ColMax(Var, Vec<usize>),
    SumAll(Var),
    MeanAll(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Matrix },
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.len(), 1);
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// A differentiable input that is not owned by a parameter store.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A frozen input; gradients stop here.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Binds a stored parameter; repeated binds on one tape return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.bound.get(&id) {
            return *v;
        }
        let value = store.get(id).clone();
        let v = if store.is_trainable(id) {
            self.push(value, Op::Leaf, true)
        } else {
            self.push(value, Op::Constant, false)
        };
        self.bound.insert(id, v);
        v
    }

    /// Gradients of bound trainable parameters.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = self
            .bound
            .iter()
            .filter(|(_, v)| self.rg(**v))
            .map(|(id, v)| {
                let g = grads.wrt(*v).cloned().unwrap_or_else(|| Matrix::zeros(self.value(*v).dim()));
                (*id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row width mismatch");
        let v = self.value(a) + self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::AddRow(a, row), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// Multiplies every row of `a` element-wise by a `1 × c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1);
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row width mismatch");
        let v = self.value(a) * self.value(row);
        let rg = self.rg(a) || self.rg(row);
        self.push(v, Op::MulRow(a, row), rg)
    }

    /// Element-wise product with a constant mask (dropout).
    pub fn mul_const(&mut self, a: Var, mask: Matrix) -> Var {
        assert_eq!(self.shape(a), mask.dim());
        let v = self.value(a) * &mask;
        let rg = self.rg(a);
        self.push(v, Op::MulConst(a, mask), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu_scalar);
        let rg = self.rg(a);
        self.push(v, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).mapv(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    /// Row-wise layer normalization with affine `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.dim();
        let mut xhat = Matrix::zeros((n, c));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..c {
                xhat[[i, j]] = (row[j] - mean) * is;
            }
        }
        let v = &xhat * self.value(gamma) + self.value(beta);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(v, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows width mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols height mismatch");
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start), rg)
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(v, Op::SelectRows(a, rows.to_vec()), rg)
    }

    /// Averages consecutive groups of `seg` rows: `(n·seg) × c → n × c`.
    pub fn segment_mean(&mut self, a: Var, seg: usize) -> Var {
        let av = self.value(a);
        let (rows, c) = av.dim();
        assert!(seg > 0 && rows % seg == 0, "segment_mean: {rows} rows not divisible by {seg}");
        let n = rows / seg;
        let mut v = Matrix::zeros((n, c));
        for i in 0..n {
            let block = av.slice(s![i * seg..(i + 1) * seg, ..]);
            v.row_mut(i).assign(&block.mean_axis(Axis(0)).unwrap());
        }
        let rg = self.rg(a);
        self.push(v, Op::SegmentMean(a, seg), rg)
    }

    /// Column-wise maximum within consecutive groups of `seg` rows.
    pub fn segment_max(&mut self, a: Var, seg: usize) -> Var {
        let av = self.value(a);
        let (rows, c) = av.dim();
        assert!(seg > 0 && rows % seg == 0, "segment_max: {rows} rows not divisible by {seg}");
        let n = rows / seg;
        let mut v = Matrix::zeros((n, c));
        let mut arg = vec![0usize; n * c];
        for i in 0..n {
            for j in 0..c {
                let mut best = i * seg;
                for r in i * seg..(i + 1) * seg {
                    if av[[r, j]] > av[[best, j]] {
                        best = r;
                    }
                }
                v[[i, j]] = av[[best, j]];
                arg[i * c + j] = best;
            }
        }
        let rg = self.rg(a);
        self.push(v, Op::SegmentMax(a, seg, arg), rg)
    }

    /// Applies a fixed `seg × seg` mixing matrix to every group of `seg` rows.
    pub fn segment_matmul(&mut self, mix: &Matrix, a: Var) -> Var {
        let seg = mix.nrows();
        assert_eq!(seg, mix.ncols());
        let av = self.value(a);
        let (rows, c) = av.dim();
        assert!(rows % seg == 0, "segment_matmul: {rows} rows not divisible by {seg}");
        let mut v = Matrix::zeros((rows, c));
        for i in 0..rows / seg {
            let block = av.slice(s![i * seg..(i + 1) * seg, ..]);
            v.slice_mut(s![i * seg..(i + 1) * seg, ..]).assign(&mix.dot(&block));
        }
        let rg = self.rg(a);
        self.push(v, Op::SegmentMatMul(a, mix.clone()), rg)
    }

    /// Maximum over rows for every column: `k × m → 1 × m`. Ties pick the first row.
    pub fn col_max(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (k, m) = av.dim();
        let mut v = Matrix::zeros((1, m));
        let mut arg = vec![0usize; m];
        for j in 0..m {
            let mut best = 0;
            for r in 1..k {
                if av[[r, j]] > av[[best, j]] {
                    best = r;
                }
            }
            v[[0, j]] = av[[best, j]];
            arg[j] = best;
        }
        let rg = self.rg(a);
        self.push(v, Op::ColMax(a, arg), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let v = Matrix::from_elem((1, 1), av.sum() / av.len() as f64);
        let rg = self.rg(a);
        self.push(v, Op::MeanAll(a), rg)
    }

    /// Mean softmax cross-entropy of `logits` (`n × c`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), labels.len(), "cross_entropy label count mismatch");
        let probs = softmax_rows(lv);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        let rg = self.rg(logits);
        self.push(
            Matrix::from_elem((1, 1), loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).len(), 1, "backward requires a scalar output");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::MulRow(a, row) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g * self.value(*row));
                }
                if self.rg(*row) {
                    let prod = g * self.value(*a);
                    self.accumulate(grads, *row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulConst(a, mask) => self.accumulate(grads, *a, g * mask),
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::Relu(a) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = g * &self.value(*a).mapv(gelu_grad);
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g * &out.mapv(|t| 1.0 - t * t);
                self.accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let d = g / self.value(*a);
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                ndarray::Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    if x < *lo || x > *hi {
                        *d = 0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let mut d = Matrix::zeros(out.dim());
                for i in 0..out.nrows() {
                    let y = out.row(i);
                    let gy = g.row(i);
                    let dot: f64 = y.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..out.ncols() {
                        d[[i, j]] = y[j] * (gy[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                if self.rg(*gamma) {
                    self.accumulate(grads, *gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*beta) {
                    self.accumulate(grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.rg(*x) {
                    let gam = self.value(*gamma);
                    let (n, c) = xhat.dim();
                    let mut dx = Matrix::zeros((n, c));
                    for i in 0..n {
                        let dxhat: Vec<f64> = (0..c).map(|j| g[[i, j]] * gam[[0, j]]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dx = (0..c).map(|j| dxhat[j] * xhat[[i, j]]).sum::<f64>() / c as f64;
                        for j in 0..c {
                            dx[[i, j]] = inv_std[i] * (dxhat[j] - mean_d - xhat[[i, j]] * mean_dx);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).nrows();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice(s![start..start + n, ..]).to_owned());
                    }
                    start += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).ncols();
                    if self.rg(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., start..start + n]).to_owned());
                    }
                    start += n;
                }
            }
            Op::SliceRows(a, start) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                for (i, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(i);
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentMean(a, seg) => {
                let (rows, c) = self.value(*a).dim();
                let mut d = Matrix::zeros((rows, c));
                let inv = 1.0 / *seg as f64;
                for r in 0..rows {
                    let src = g.row(r / seg);
                    d.row_mut(r).assign(&(&src * inv));
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentMax(a, _seg, arg) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                let c = g.ncols();
                for i in 0..g.nrows() {
                    for j in 0..c {
                        d[[arg[i * c + j], j]] += g[[i, j]];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentMatMul(a, mix) => {
                let seg = mix.nrows();
                let rows = g.nrows();
                let mut d = Matrix::zeros(g.dim());
                let mt = mix.t();
                for i in 0..rows / seg {
                    let block = g.slice(s![i * seg..(i + 1) * seg, ..]);
                    d.slice_mut(s![i * seg..(i + 1) * seg, ..]).assign(&mt.dot(&block));
                }
                self.accumulate(grads, *a, d);
            }
            Op::ColMax(a, arg) => {
                let mut d = Matrix::zeros(self.value(*a).dim());
                for (j, &r) in arg.iter().enumerate() {
                    d[[r, j]] = g[[0, j]];
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let d = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                self.accumulate(grads, *a, d);
            }
            Op::MeanAll(a) => {
                let dim = self.value(*a).dim();
                let n = (dim.0 * dim.1) as f64;
                self.accumulate(grads, *a, Matrix::from_elem(dim, g[[0, 0]] / n));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let n = labels.len() as f64;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[[i, y]] -= 1.0;
                }
                d *= g[[0, 0]] / n;
                self.accumulate(grads, *logits, d);
            }
        }
    }
}
