//! A reverse-mode autodiff tape over dense `f64` matrices.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] walks it once in reverse.
//! Parameter leaves borrow their values from the [`ParamStore`]; nothing is
//! copied when a parameter enters the graph.

use ndarray::{s, Array2, Axis};

use super::params::{Grads, Mat, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Shift(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    SoftmaxRows(Var),
    NormalizeRows(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    BceWithLogits(Var, Mat),
    SoftmaxCrossEntropy(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    Unfold(Var, usize),
    LstmCell(Var, Var),
    GruCell(Var, Var, Var),
}

struct Node {
    value: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// Add `g` into rows `rows` and columns `cols` of the gradient of `v`.
fn acc_block(grads: &mut [Option<Mat>], v: Var, dim: (usize, usize), rows: (usize, usize), cols: (usize, usize), g: &Mat) {
    let slot = grads[v.0].get_or_insert_with(|| Array2::zeros(dim));
    let mut block = slot.slice_mut(s![rows.0..rows.1, cols.0..cols.1]);
    block += g;
}

fn scalar(x: f64) -> Mat {
    Array2::from_elem((1, 1), x)
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a (m x n) + row (1 x n)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x n row");
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul is elementwise");
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.needs(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    /// Multiply by a 1x1 node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) * self.scalar(s);
        let ng = self.needs(a) || self.needs(s);
        self.push(value, Op::ScaleBy(a, s), ng)
    }

    /// Add a 1x1 node to every entry.
    pub fn shift(&mut self, a: Var, s: Var) -> Var {
        let value = self.value(a) + self.scalar(s);
        let ng = self.needs(a) || self.needs(s);
        self.push(value, Op::Shift(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.value(a).slice(s![.., lo..hi]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceCols(a, lo, hi), ng)
    }

    pub fn slice_rows(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let value = self.value(a).slice(s![lo..hi, ..]).to_owned();
        let ng = self.needs(a);
        self.push(value, Op::SliceRows(a, lo, hi), ng)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.slice_rows(a, i, i + 1)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.needs(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Rows divided by `sqrt(|row|^2 + eps)`.
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let n = (row.dot(&row) + eps).sqrt();
            row.mapv_inplace(|x| x / n);
            norms.push(n);
        }
        let ng = self.needs(a);
        self.push(value, Op::NormalizeRows(a, norms), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = scalar(m.sum() / m.len() as f64);
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim(), "mse shapes differ");
        let value = scalar((x - y).mapv(|d| d * d).sum() / x.len() as f64);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Mse(a, b), ng)
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim(), "bce shapes differ");
        let total: f64 = x
            .iter()
            .zip(targets.iter())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let value = scalar(total / x.len() as f64);
        let ng = self.needs(logits);
        self.push(value, Op::BceWithLogits(logits, targets), ng)
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len(), "one target per row");
        let mut total = 0.0;
        for (row, &t) in x.rows().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let value = scalar(total / targets.len() as f64);
        let ng = self.needs(logits);
        self.push(value, Op::SoftmaxCrossEntropy(logits, targets.to_vec()), ng)
    }

    /// Rows of `table` selected by `ids` (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&t.row(id));
        }
        let ng = self.needs(table);
        self.push(value, Op::GatherRows(table, ids.to_vec()), ng)
    }

    /// Each row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut value = Array2::zeros((x.nrows() * times, x.ncols()));
        for (r, row) in x.rows().into_iter().enumerate() {
            for k in 0..times {
                value.row_mut(r * times + k).assign(&row);
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::RepeatRows(a, times), ng)
    }

    /// The whole matrix stacked `times` times.
    pub fn tile_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let h = x.nrows();
        let mut value = Array2::zeros((h * times, x.ncols()));
        for k in 0..times {
            value.slice_mut(s![k * h..(k + 1) * h, ..]).assign(x);
        }
        let ng = self.needs(a);
        self.push(value, Op::TileRows(a, times), ng)
    }

    /// Time-convolution patches: row `t` holds rows `t - k/2 ..= t + k/2` of
    /// `a` side by side, zero outside the sequence. `k` must be odd.
    pub fn unfold(&mut self, a: Var, k: usize) -> Var {
        assert!(k % 2 == 1, "unfold kernel must be odd");
        let x = self.value(a);
        let (t, c) = x.dim();
        let half = (k / 2) as isize;
        let mut value = Array2::zeros((t, k * c));
        for row in 0..t as isize {
            for j in 0..k as isize {
                let src = row + j - half;
                if src >= 0 && src < t as isize {
                    value
                        .slice_mut(s![row as usize, j as usize * c..(j as usize + 1) * c])
                        .assign(&x.row(src as usize));
                }
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::Unfold(a, k), ng)
    }

    /// LSTM cell nonlinearity. `pre` holds gate pre-activations in
    /// `[input, forget, cell, output]` order; returns `[h | c]`.
    pub fn lstm_cell(&mut self, pre: Var, c_prev: Var) -> Var {
        let (p, cp) = (self.value(pre), self.value(c_prev));
        let (b, h4) = p.dim();
        let h = h4 / 4;
        assert_eq!(cp.dim(), (b, h), "lstm cell state shape");
        let mut value = Array2::zeros((b, 2 * h));
        for r in 0..b {
            for j in 0..h {
                let i = sigmoid(p[[r, j]]);
                let f = sigmoid(p[[r, h + j]]);
                let g = p[[r, 2 * h + j]].tanh();
                let o = sigmoid(p[[r, 3 * h + j]]);
                let c = f * cp[[r, j]] + i * g;
                value[[r, j]] = o * c.tanh();
                value[[r, h + j]] = c;
            }
        }
        let ng = self.needs(pre) || self.needs(c_prev);
        self.push(value, Op::LstmCell(pre, c_prev), ng)
    }

    /// GRU update. `xg` and `hg` are the input and recurrent projections in
    /// `[reset, update, candidate]` order (biases included).
    pub fn gru_cell(&mut self, xg: Var, hg: Var, h_prev: Var) -> Var {
        let (x, hh, hp) = (self.value(xg), self.value(hg), self.value(h_prev));
        let (b, h3) = x.dim();
        let h = h3 / 3;
        assert_eq!(hh.dim(), (b, h3));
        assert_eq!(hp.dim(), (b, h));
        let mut value = Array2::zeros((b, h));
        for r in 0..b {
            for j in 0..h {
                let reset = sigmoid(x[[r, j]] + hh[[r, j]]);
                let update = sigmoid(x[[r, h + j]] + hh[[r, h + j]]);
                let cand = (x[[r, 2 * h + j]] + reset * hh[[r, 2 * h + j]]).tanh();
                value[[r, j]] = (1.0 - update) * cand + update * hp[[r, j]];
            }
        }
        let ng = self.needs(xg) || self.needs(hg) || self.needs(h_prev);
        self.push(value, Op::GruCell(xg, hg, h_prev), ng)
    }

    /// Gradients of the 1x1 node `loss` with respect to every parameter that
    /// reached it.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(scalar(1.0));
        let mut out = Grads::empty(self.store.len());

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let own = || node.value.as_ref().expect("op value");
            match &node.op {
                Op::Const => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        acc(&mut grads, *b, -&g);
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        acc(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::ScaleBy(a, s) => {
                    if self.needs(*s) {
                        acc(&mut grads, *s, scalar((&g * self.value(*a)).sum()));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g * self.scalar(*s));
                    }
                }
                Op::Shift(a, s) => {
                    if self.needs(*s) {
                        acc(&mut grads, *s, scalar(g.sum()));
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Sigmoid(a) => {
                    let d = own().mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, g * d);
                }
                Op::Tanh(a) => {
                    let d = own().mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, g * d);
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g * mask);
                }
                Op::SliceCols(a, lo, hi) => {
                    let dim = self.value(*a).dim();
                    acc_block(&mut grads, *a, dim, (0, dim.0), (*lo, *hi), &g);
                }
                Op::SliceRows(a, lo, hi) => {
                    let dim = self.value(*a).dim();
                    acc_block(&mut grads, *a, dim, (*lo, *hi), (0, dim.1), &g);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            acc(&mut grads, p, g.slice(s![.., at..at + w]).to_owned());
                        }
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.value(p).nrows();
                        if self.needs(p) {
                            acc(&mut grads, p, g.slice(s![at..at + h, ..]).to_owned());
                        }
                        at += h;
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = own();
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let total = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * total);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::NormalizeRows(a, norms) => {
                    let y = own();
                    let mut d = g.clone();
                    for ((mut drow, yrow), &n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                        let proj = drow.dot(&yrow);
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv = (*dv - yv * proj) / n);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Array2::from_elem(x.dim(), g[[0, 0]] / x.len() as f64));
                }
                Op::Mse(a, b) => {
                    let diff = self.value(*a) - self.value(*b);
                    let d = diff * (2.0 * g[[0, 0]] / self.value(*a).len() as f64);
                    if self.needs(*b) {
                        acc(&mut grads, *b, -&d);
                    }
                    if self.needs(*a) {
                        acc(&mut grads, *a, d);
                    }
                }
                Op::BceWithLogits(a, targets) => {
                    let x = self.value(*a);
                    let scale = g[[0, 0]] / x.len() as f64;
                    let mut d = x.mapv(sigmoid);
                    d.zip_mut_with(targets, |dv, &t| *dv = (*dv - t) * scale);
                    acc(&mut grads, *a, d);
                }
                Op::SoftmaxCrossEntropy(a, targets) => {
                    let x = self.value(*a);
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut d = x.clone();
                    for (mut row, &t) in d.rows_mut().into_iter().zip(targets) {
                        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                        row.mapv_inplace(|v| (v - max).exp());
                        let sum = row.sum();
                        row.mapv_inplace(|v| v / sum * scale);
                        row[t] -= scale;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(table, ids) => {
                    let mut d = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = d.row_mut(id);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, d);
                }
                Op::RepeatRows(a, times) => {
                    let x = self.value(*a);
                    let mut d = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let block = g.slice(s![r * times..(r + 1) * times, ..]).sum_axis(Axis(0));
                        d.row_mut(r).assign(&block);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::TileRows(a, times) => {
                    let h = self.value(*a).nrows();
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for k in 0..*times {
                        d += &g.slice(s![k * h..(k + 1) * h, ..]);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Unfold(a, k) => {
                    let (t, c) = self.value(*a).dim();
                    let half = (*k / 2) as isize;
                    let mut d = Array2::zeros((t, c));
                    for row in 0..t as isize {
                        for j in 0..*k as isize {
                            let src = row + j - half;
                            if src >= 0 && src < t as isize {
                                let mut dst = d.row_mut(src as usize);
                                dst += &g.slice(s![row as usize, j as usize * c..(j as usize + 1) * c]);
                            }
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LstmCell(pre, c_prev) => {
                    let (p, cp) = (self.value(*pre), self.value(*c_prev));
                    let (b, h4) = p.dim();
                    let h = h4 / 4;
                    let out = own();
                    let mut dpre = Array2::zeros((b, h4));
                    let mut dcp = Array2::zeros((b, h));
                    for r in 0..b {
                        for j in 0..h {
                            let i = sigmoid(p[[r, j]]);
                            let f = sigmoid(p[[r, h + j]]);
                            let gg = p[[r, 2 * h + j]].tanh();
                            let o = sigmoid(p[[r, 3 * h + j]]);
                            let c = out[[r, h + j]];
                            let tc = c.tanh();
                            let dh = g[[r, j]];
                            let dc = g[[r, h + j]] + dh * o * (1.0 - tc * tc);
                            dpre[[r, j]] = dc * gg * i * (1.0 - i);
                            dpre[[r, h + j]] = dc * cp[[r, j]] * f * (1.0 - f);
                            dpre[[r, 2 * h + j]] = dc * i * (1.0 - gg * gg);
                            dpre[[r, 3 * h + j]] = dh * tc * o * (1.0 - o);
                            dcp[[r, j]] = dc * f;
                        }
                    }
                    if self.needs(*c_prev) {
                        acc(&mut grads, *c_prev, dcp);
                    }
                    if self.needs(*pre) {
                        acc(&mut grads, *pre, dpre);
                    }
                }
                Op::GruCell(xg, hg, h_prev) => {
                    let (x, hh, hp) = (self.value(*xg), self.value(*hg), self.value(*h_prev));
                    let (b, h3) = x.dim();
                    let h = h3 / 3;
                    let mut dx = Array2::zeros((b, h3));
                    let mut dhg = Array2::zeros((b, h3));
                    let mut dhp = Array2::zeros((b, h));
                    for r in 0..b {
                        for j in 0..h {
                            let reset = sigmoid(x[[r, j]] + hh[[r, j]]);
                            let update = sigmoid(x[[r, h + j]] + hh[[r, h + j]]);
                            let cand = (x[[r, 2 * h + j]] + reset * hh[[r, 2 * h + j]]).tanh();
                            let dout = g[[r, j]];
                            let dcand = dout * (1.0 - update) * (1.0 - cand * cand);
                            let dupdate = dout * (hp[[r, j]] - cand) * update * (1.0 - update);
                            let dreset = dcand * hh[[r, 2 * h + j]] * reset * (1.0 - reset);
                            dx[[r, j]] = dreset;
                            dx[[r, h + j]] = dupdate;
                            dx[[r, 2 * h + j]] = dcand;
                            dhg[[r, j]] = dreset;
                            dhg[[r, h + j]] = dupdate;
                            dhg[[r, 2 * h + j]] = dcand * reset;
                            dhp[[r, j]] = dout * update;
                        }
                    }
                    if self.needs(*xg) {
                        acc(&mut grads, *xg, dx);
                    }
                    if self.needs(*hg) {
                        acc(&mut grads, *hg, dhg);
                    }
                    if self.needs(*h_prev) {
                        acc(&mut grads, *h_prev, dhp);
                    }
                }
            }
        }
        out
    }
}
