//! Parameterized building blocks. Layers only hold [`ParamId`]s; the values
//! live in a [`ParamStore`] and enter a [`Graph`] on demand.

use rand::Rng;
use ndarray::s;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), in_dim, out_dim, in_dim, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, out_dim, in_dim, rng);
        Self { w, b, in_dim, out_dim }
    }

    /// Look the layer up in a store built by [`Linear::new`].
    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (in_dim, out_dim) = store.get(w).dim();
        Some(Self { w, b, in_dim, out_dim })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// One LSTM layer. Gates are packed `[input, forget, cell, output]`.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_ih = store.add_uniform(format!("{name}.w_ih"), in_dim, 4 * hidden, hidden, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), hidden, 4 * hidden, hidden, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, 4 * hidden, hidden, rng);
        store
            .get_mut(b)
            .slice_mut(s![.., hidden..2 * hidden])
            .mapv_inplace(|v| v + 1.0);
        Self { w_ih, w_hh, b, in_dim, hidden }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let w_ih = store.id(&format!("{name}.w_ih"))?;
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (in_dim, h4) = store.get(w_ih).dim();
        Some(Self { w_ih, w_hh, b, in_dim, hidden: h4 / 4 })
    }

    /// One step from an input already multiplied by `w_ih`.
    /// Returns the new `(h, c)`.
    pub fn step_projected(&self, g: &mut Graph, x_proj: Var, h: Var, c: Var) -> (Var, Var) {
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        let hw = g.matmul(h, w_hh);
        let pre = g.add(x_proj, hw);
        let pre = g.add_row(pre, b);
        let hc = g.lstm_cell(pre, c);
        let h_new = g.slice_cols(hc, 0, self.hidden);
        let c_new = g.slice_cols(hc, self.hidden, 2 * self.hidden);
        (h_new, c_new)
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> (Var, Var) {
        let w_ih = g.param(self.w_ih);
        let xp = g.matmul(x, w_ih);
        self.step_projected(g, xp, h, c)
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> (Var, Var) {
        let h = g.constant(ndarray::Array2::zeros((batch, self.hidden)));
        let c = g.constant(ndarray::Array2::zeros((batch, self.hidden)));
        (h, c)
    }

    /// Run over a time-major input of shape `(steps * batch) x in_dim`.
    /// Returns the hidden state of every step in time order (each
    /// `batch x hidden`), even when `reverse` scans the sequence backwards.
    pub fn run(&self, g: &mut Graph, x: Var, batch: usize, reverse: bool) -> Vec<Var> {
        let rows = g.value(x).nrows();
        assert!(batch > 0 && rows % batch == 0, "input rows must be a multiple of the batch");
        let steps = rows / batch;
        let w_ih = g.param(self.w_ih);
        let xp = g.matmul(x, w_ih);
        let (mut h, mut c) = self.zero_state(g, batch);
        let mut out = vec![h; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xt = g.slice_rows(xp, t * batch, (t + 1) * batch);
            (h, c) = self.step_projected(g, xt, h, c);
            out[t] = h;
        }
        out
    }
}

/// The recurrent half of a GRU. Input projections (with their biases) are
/// supplied by the caller in `[reset, update, candidate]` order.
#[derive(Debug, Clone, Copy)]
pub struct GruRecurrence {
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruRecurrence {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, rng: &mut impl Rng) -> Self {
        let w_hh = store.add_uniform(format!("{name}.w_hh"), hidden, 3 * hidden, hidden, rng);
        let b_hh = store.add_uniform(format!("{name}.b_hh"), 1, 3 * hidden, hidden, rng);
        Self { w_hh, b_hh, hidden }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        let b_hh = store.id(&format!("{name}.b_hh"))?;
        let hidden = store.get(w_hh).nrows();
        Some(Self { w_hh, b_hh, hidden })
    }

    pub fn step(&self, g: &mut Graph, x_proj: Var, h: Var) -> Var {
        let w_hh = g.param(self.w_hh);
        let b_hh = g.param(self.b_hh);
        let hg = g.matmul(h, w_hh);
        let hg = g.add_row(hg, b_hh);
        g.gru_cell(x_proj, hg, h)
    }
}
