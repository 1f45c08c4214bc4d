use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMethod {
    Pca,
    NeighborEmbed,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "neighbor-embed" | "umap" => Ok(Self::NeighborEmbed),
            other => Err(Error::Config(format!("unknown projection method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<String>,
    pub method: ProjectionMethod,
}

const NEIGHBORS: usize = 10;
const EPOCHS: usize = 300;
const NEGATIVE_SAMPLES: usize = 5;
// Curve parameters of the low-dimensional similarity 1 / (1 + a d^(2b)),
// the usual fit for a minimum distance of 0.1.
const CURVE_A: f64 = 1.577;
const CURVE_B: f64 = 0.895;

pub fn project_embeddings(
    embeddings: &[Vec<f64>],
    labels: &[String],
    method: ProjectionMethod,
    seed: u64,
) -> Result<Projection2D> {
    if embeddings.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "projection needs at least 3 embeddings, got {}",
            embeddings.len()
        )));
    }
    if labels.len() != embeddings.len() {
        return Err(Error::Contract("one label per embedding".into()));
    }
    let dim = embeddings[0].len();
    if dim == 0 || embeddings.iter().any(|e| e.len() != dim || e.iter().any(|v| !v.is_finite())) {
        return Err(Error::DegenerateInput("embeddings must share a positive dimension and be finite".into()));
    }
    let points = match method {
        ProjectionMethod::Pca => pca(embeddings),
        ProjectionMethod::NeighborEmbed => neighbor_embed(embeddings, seed),
    };
    Ok(Projection2D {
        points,
        labels: labels.to_vec(),
        method,
    })
}

/// Coordinates on the two leading principal axes. Each axis is signed so its
/// largest-magnitude loading is positive.
fn pca(x: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = x.len();
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Vec::with_capacity(2);
    for &k in order.iter().take(2) {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, c| if c.abs() > best.abs() { c } else { best });
        if pivot < 0.0 {
            v = -v;
        }
        axes.push(v);
    }
    while axes.len() < 2 {
        axes.push(nalgebra::DVector::zeros(d));
    }
    (0..n)
        .map(|i| {
            let row = centered.row(i);
            [row.dot(&axes[0].transpose()), row.dot(&axes[1].transpose())]
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Fuzzy k-nearest-neighbour graph, symmetrized by probabilistic union, then
/// laid out in the plane by sampled attraction along edges and repulsion
/// from random points.
fn neighbor_embed(x: &[Vec<f64>], seed: u64) -> Vec<[f64; 2]> {
    let n = x.len();
    let k = NEIGHBORS.min(n - 1);
    let mut weights = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let mut nearest: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(&x[i], &x[j]), j)).collect();
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        nearest.truncate(k);
        let rho = nearest[0].0;
        let target = (k as f64).log2().max(1e-3);
        let mass = |sigma: f64| nearest.iter().map(|&(d, _)| (-(d - rho).max(0.0) / sigma).exp()).sum::<f64>();
        let (mut lo, mut hi) = (1e-12f64, 1e6f64);
        for _ in 0..64 {
            let mid = (lo * hi).sqrt();
            if mass(mid) > target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let sigma = (lo * hi).sqrt();
        for &(d, j) in &nearest {
            weights[i][j] = (-(d - rho).max(0.0) / sigma).exp();
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (weights[i][j], weights[j][i]);
            let w = a + b - a * b;
            if w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    let w_max = edges.iter().map(|e| e.2).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = pca(x);
    let scale = start
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let mut y: Vec<[f64; 2]> = start
        .iter()
        .map(|p| {
            [
                10.0 * p[0] / scale + rng.random_range(-1e-2..1e-2),
                10.0 * p[1] / scale + rng.random_range(-1e-2..1e-2),
            ]
        })
        .collect();

    let clip = |v: f64| v.clamp(-4.0, 4.0);
    for epoch in 0..EPOCHS {
        let alpha = 1.0 - epoch as f64 / EPOCHS as f64;
        for &(i, j, w) in &edges {
            if rng.random::<f64>() > w / w_max {
                continue;
            }
            let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            if d2 > 0.0 {
                let coeff = -2.0 * CURVE_A * CURVE_B * d2.powf(CURVE_B - 1.0) / (1.0 + CURVE_A * d2.powf(CURVE_B));
                for c in 0..2 {
                    let step = clip(coeff * (y[i][c] - y[j][c])) * alpha;
                    y[i][c] += step;
                    y[j][c] -= step;
                }
            }
            for _ in 0..NEGATIVE_SAMPLES {
                let m = rng.random_range(0..n);
                if m == i {
                    continue;
                }
                let d2 = (y[i][0] - y[m][0]).powi(2) + (y[i][1] - y[m][1]).powi(2);
                let coeff = 2.0 * CURVE_B / ((1e-3 + d2) * (1.0 + CURVE_A * d2.powf(CURVE_B)));
                for c in 0..2 {
                    y[i][c] += clip(coeff * (y[i][c] - y[m][c])) * alpha;
                }
            }
        }
    }
    y
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    if points.len() != labels.len() || points.len() < 2 {
        return Err(Error::DegenerateInput("silhouette needs two or more labelled points".into()));
    }
    let mut distinct: Vec<&String> = labels.iter().collect();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::DegenerateInput("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut own = (0.0, 0usize);
        let mut others: Vec<(f64, usize)> = vec![(0.0, 0); distinct.len()];
        for j in 0..points.len() {
            if i == j {
                continue;
            }
            let d = dist(&points[i], &points[j]);
            if labels[j] == labels[i] {
                own.0 += d;
                own.1 += 1;
            } else {
                let c = distinct.binary_search(&&labels[j]).expect("label listed");
                others[c].0 += d;
                others[c].1 += 1;
            }
        }
        if own.1 == 0 {
            continue;
        }
        let a = own.0 / own.1 as f64;
        let b = others
            .iter()
            .filter(|o| o.1 > 0)
            .map(|o| o.0 / o.1 as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

impl Projection2D {
    pub fn silhouette(&self) -> Result<f64> {
        let pts: Vec<Vec<f64>> = self.points.iter().map(|p| p.to_vec()).collect();
        silhouette(&pts, &self.labels)
    }
}
