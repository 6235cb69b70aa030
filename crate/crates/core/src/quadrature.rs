//! Gauss–Hermite rules for expectations under one-dimensional Gaussians.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

/// Shared rule of the given order, built once per process.
pub(crate) fn cached(order: usize) -> Arc<GaussHermite> {
    static RULES: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
    let mut rules = RULES
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    rules
        .entry(order)
        .or_insert_with(|| Arc::new(GaussHermite::new(order)))
        .clone()
}

/// `(h_n(x), h_{n−1}(x))` with `h_k = He_k/√k!`.
fn normalised_hermite(n: usize, x: f64) -> (f64, f64) {
    let (mut prev, mut cur) = (0.0, 1.0);
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Nodes and weights of the probabilists' Gauss–Hermite rule: for polynomial
/// `f` of degree at most `2·order − 1`, `E[f(Z)] = Σ_i w_i f(x_i)` exactly for
/// `Z ~ N(0, 1)`. Weights sum to one.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: eigen-decomposition of the Jacobi matrix of the
    /// probabilists' Hermite recurrence `He_{k+1} = x·He_k − k·He_{k−1}`.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss–Hermite order must be positive");
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        // Newton-polish each node on the normalised recurrence, then take the
        // weight `1/(n·h_{n−1}(x)²)`, which is more accurate in the tails than
        // the squared eigenvector component.
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| {
                let mut x = eig.eigenvalues[k];
                for _ in 0..3 {
                    let (hn, hn1) = normalised_hermite(order, x);
                    let step = hn / ((order as f64).sqrt() * hn1);
                    if !step.is_finite() {
                        break;
                    }
                    x -= step;
                }
                let (_, hn1) = normalised_hermite(order, x);
                (x, 1.0 / (order as f64 * hn1 * hn1))
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrise the rule so odd moments vanish to rounding
        let n = pairs.len();
        for i in 0..n / 2 {
            let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
            let w = 0.5 * (pairs[n - 1 - i].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]` for `X ~ N(mean, variance)`.
    pub fn expect(&self, mean: f64, variance: f64, f: impl Fn(f64) -> f64) -> f64 {
        let sd = variance.max(0.0).sqrt();
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mean + sd * x))
            .sum()
    }
}
