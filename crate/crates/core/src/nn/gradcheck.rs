//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::params::ParamStore;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare reverse-mode gradients of `loss_fn` with central differences
/// `(L(p + eps) - L(p - eps)) / 2 eps`. At most `max_per_param` entries of
/// each parameter are probed, spread evenly through the matrix.
pub fn check_gradients<F>(store: &ParamStore, loss_fn: F, eps: f64, max_per_param: usize) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g);
        g.backward(loss)
    };
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let loss = loss_fn(&mut g);
        g.scalar(loss)
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        entries_checked: 0,
    };
    for id in store.ids() {
        let n = store.get(id).len();
        let cols = store.get(id).ncols();
        let stride = (n / max_per_param.max(1)).max(1);
        for flat in (0..n).step_by(stride).take(max_per_param) {
            let at = (flat / cols, flat % cols);
            let original = probe.get(id)[at];
            probe.get_mut(id)[at] = original + eps;
            let plus = eval(&probe);
            probe.get_mut(id)[at] = original - eps;
            let minus = eval(&probe);
            probe.get_mut(id)[at] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[at]);
            let err = relative_error(a, numeric, 1e-5);
            report.entries_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{flat}] analytic={a:.6e} numeric={numeric:.6e}", store.name(id));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::layers::{GruRecurrence, Linear, Lstm};

    const TOL: f64 = 1e-6;

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            s.add_uniform(name, r, c, 2, &mut rng);
        }
        s
    }

    fn assert_close(store: &ParamStore, f: impl Fn(&mut Graph) -> Var) {
        let report = check_gradients(store, f, 1e-5, 64);
        assert!(report.max_rel_error < TOL, "{report:?}");
    }

    #[test]
    fn elementwise_and_matrix_ops() {
        let s = store_with(&[("a", 3, 4), ("b", 4, 2), ("c", 3, 2), ("r", 1, 2), ("k", 1, 1)], 1);
        assert_close(&s, |g| {
            let [a, b, c, r, k] = ["a", "b", "c", "r", "k"].map(|n| g.param(g.store().id(n).unwrap()));
            let ab = g.matmul(a, b);
            let x = g.add(ab, c);
            let x = g.add_row(x, r);
            let y = g.mul(x, c);
            let y = g.sub(y, ab);
            let y = g.scale_by(y, k);
            let y = g.shift(y, k);
            let t = g.tanh(y);
            let sg = g.sigmoid(x);
            let z = g.concat_cols(&[t, sg]);
            let z = g.scale(z, 0.7);
            let zt = g.transpose(z);
            let sq = g.matmul(z, zt);
            let sm = g.softmax_rows(sq);
            let part = g.slice_cols(sm, 1, 3);
            let row = g.row(part, 2);
            let both = g.concat_rows(&[part, row]);
            g.sum(both)
        });
    }

    #[test]
    fn relu_and_normalize() {
        let s = store_with(&[("a", 4, 3)], 2);
        assert_close(&s, |g| {
            let a = g.param(g.store().id("a").unwrap());
            let r = g.relu(a);
            let a2 = g.add(a, r);
            let n = g.normalize_rows(a2, 1e-8);
            let w = g.constant(array![[1.0], [-2.0], [0.5]]);
            let y = g.matmul(n, w);
            let y = g.mul(y, y);
            g.mean(y)
        });
    }

    #[test]
    fn losses() {
        let s = store_with(&[("a", 3, 5), ("b", 3, 5)], 3);
        assert_close(&s, |g| {
            let a = g.param(g.store().id("a").unwrap());
            let b = g.param(g.store().id("b").unwrap());
            let mse = g.mse(a, b);
            let mut t = Array2::zeros((3, 5));
            t[[2, 4]] = 1.0;
            t[[0, 1]] = 1.0;
            let bce = g.bce_with_logits(a, t);
            let ce = g.softmax_cross_entropy(b, &[4, 0, 2]);
            let x = g.add(mse, bce);
            g.add(x, ce)
        });
    }

    #[test]
    fn layout_ops() {
        let s = store_with(&[("emb", 5, 3), ("p", 2, 3)], 4);
        assert_close(&s, |g| {
            let e = g.param(g.store().id("emb").unwrap());
            let p = g.param(g.store().id("p").unwrap());
            let x = g.gather_rows(e, &[1, 3, 1, 0]);
            let rep = g.repeat_rows(x, 2);
            let tile = g.tile_rows(p, 4);
            let y = g.add(rep, tile);
            let u = g.unfold(y, 3);
            let u = g.tanh(u);
            let w = g.constant(Array2::from_shape_fn((9, 1), |(i, _)| i as f64 - 4.0));
            let z = g.matmul(u, w);
            let z = g.mul(z, z);
            g.sum(z)
        });
    }

    #[test]
    fn recurrent_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        let lstm = Lstm::new(&mut s, "lstm", 3, 4, &mut rng);
        let back = Lstm::new(&mut s, "back", 3, 2, &mut rng);
        let xin = Linear::new(&mut s, "xin", 4, 9, &mut rng);
        let gru = GruRecurrence::new(&mut s, "gru", 3, &mut rng);
        s.add_uniform("x", 8, 3, 1, &mut rng);
        assert_close(&s, |g| {
            let x = g.param(g.store().id("x").unwrap());
            let hs = lstm.run(g, x, 2, false);
            let bs = back.run(g, x, 2, true);
            let mut h = g.constant(Array2::zeros((2, 3)));
            for (&f, &b) in hs.iter().zip(&bs) {
                let xp = xin.forward(g, f);
                h = gru.step(g, xp, h);
                let bb = g.sum(b);
                h = g.shift(h, bb);
                h = g.tanh(h);
            }
            let sq = g.mul(h, h);
            g.sum(sq)
        });
    }

    #[test]
    fn constants_get_no_gradient() {
        let s = store_with(&[("a", 2, 2)], 6);
        let mut g = Graph::new(&s);
        let a = g.param(s.id("a").unwrap());
        let c = g.constant(array![[1.0, 2.0], [3.0, 4.0]]);
        let y = g.mul(a, c);
        let l = g.sum(y);
        let grads = g.backward(l);
        assert_eq!(grads.get(s.id("a").unwrap()).unwrap(), &array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-5), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-5) - 0.1 / 1.1).abs() < 1e-12);
    }
}
