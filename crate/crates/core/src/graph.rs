//! Dense token affinity graph.
//!
//! Raw affinities are inner products of token features. They are min-max
//! normalized over the whole matrix, raised to a contrast-sharpening power,
//! and the diagonal receives a degree-proportional self-loop. The Laplacian
//! `L = D - W` is never materialized; its quadratic form is evaluated from
//! `W` and the degree vector.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_io::Tensor;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    weights: Array2<f64>,
    degrees: Array1<f64>,
}

impl AffinityGraph {
    /// Wraps a weight matrix, checking it is square, finite, nonnegative and
    /// symmetric. Degrees are the row sums.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        let (n, m) = weights.dim();
        if n != m || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "weights must be square and nonempty, got {n}x{m}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteInput("affinity weights"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvariantViolation {
                field: "weights",
                reason: "affinities must be nonnegative".into(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (weights[[i, j]], weights[[j, i]]);
                if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvariantViolation {
                        field: "weights",
                        reason: format!("asymmetric entry ({i}, {j}): {a} vs {b}"),
                    });
                }
            }
        }
        Ok(Self::from_weights_unchecked(weights))
    }

    pub(crate) fn from_weights_unchecked(weights: Array2<f64>) -> Self {
        let degrees = row_sums(&weights);
        Self { weights, degrees }
    }

    pub fn n_nodes(&self) -> usize {
        self.degrees.len()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> &Array1<f64> {
        &self.degrees
    }

    pub fn total_volume(&self) -> f64 {
        self.degrees.sum()
    }

    /// Induced subgraph on `nodes` (in the given order). Degrees are recomputed
    /// from the retained edges only.
    pub fn subgraph(&self, nodes: &[usize]) -> Self {
        let m = nodes.len();
        let w = Array2::from_shape_fn((m, m), |(a, b)| self.weights[[nodes[a], nodes[b]]]);
        Self::from_weights_unchecked(w)
    }

    /// Normalized cut of a hard labeling, `Σ_k cut(P_k, P̄_k) / vol(P_k)`.
    ///
    /// An empty or zero-volume cluster contributes 1 to the sum, so that
    /// `ncut + rayleigh_sum == k` holds for every labeling.
    pub fn ncut(&self, labels: &[usize], k: usize) -> f64 {
        let (cut, vol) = self.cut_and_volume(labels, k);
        cut.iter()
            .zip(&vol)
            .map(|(&c, &v)| if v > 0.0 { c / v } else { 1.0 })
            .sum()
    }

    /// `Σ_k x_kᵀWx_k / x_kᵀDx_k` for the indicator vectors of a labeling;
    /// empty clusters contribute 0.
    pub fn rayleigh_sum(&self, labels: &[usize], k: usize) -> f64 {
        let n = self.n_nodes();
        let mut assoc = vec![0.0; k];
        let mut vol = vec![0.0; k];
        for i in 0..n {
            vol[labels[i]] += self.degrees[i];
            for j in 0..n {
                if labels[i] == labels[j] {
                    assoc[labels[i]] += self.weights[[i, j]];
                }
            }
        }
        assoc
            .iter()
            .zip(&vol)
            .map(|(&a, &v)| if v > 0.0 { a / v } else { 0.0 })
            .sum()
    }

    /// Per-cluster boundary weight and volume of a labeling.
    pub fn cut_and_volume(&self, labels: &[usize], k: usize) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(labels.len(), self.n_nodes(), "one label per node");
        let n = self.n_nodes();
        let mut cut = vec![0.0; k];
        let mut vol = vec![0.0; k];
        for i in 0..n {
            let li = labels[i];
            vol[li] += self.degrees[i];
            for (&lj, &w) in labels.iter().zip(self.weights.row(i)) {
                if lj != li {
                    cut[li] += w;
                }
            }
        }
        (cut, vol)
    }

    /// `xᵀ(D − W)x`, i.e. the cut weight when `x` is a 0/1 indicator.
    pub fn laplacian_quadratic(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "vector of length {} for a graph with {} nodes",
                x.len(),
                self.n_nodes()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("laplacian_quadratic"));
        }
        let degree_term: f64 = self.degrees.iter().zip(x).map(|(d, xi)| d * xi * xi).sum();
        let value = degree_term - quadratic_form(&self.weights, x);
        let scale = x.dot(&x);
        if value < 0.0 && value >= -1e-9 * scale.max(f64::MIN_POSITIVE) {
            Ok(0.0)
        } else {
            Ok(value)
        }
    }
}

/// Builds the regularized affinity graph from an `N×d` feature matrix.
///
/// The self-loop added to node `i` is `lambda_affinity · d'_i`, where `d'` is
/// the degree of the powered matrix before regularization. The returned
/// degrees are recomputed from the finished matrix.
pub fn build_affinity(
    features: &Tensor,
    alpha_power: f64,
    lambda_affinity: f64,
) -> Result<AffinityGraph> {
    let (n, d) = match features.shape() {
        &[n, d] => (n, d),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "features must be N×d, got {other:?}"
            )));
        }
    };
    if n < 2 {
        return Err(Error::ShapeMismatch(format!(
            "need at least 2 nodes, got {n}"
        )));
    }
    if !features.is_finite() {
        return Err(Error::NonFiniteInput("features"));
    }
    if !(alpha_power.is_finite() && alpha_power > 0.0) {
        return Err(Error::InvariantViolation {
            field: "alpha_power",
            reason: format!("must be positive, got {alpha_power}"),
        });
    }
    if !(lambda_affinity.is_finite() && lambda_affinity >= 0.0) {
        return Err(Error::InvariantViolation {
            field: "lambda_affinity",
            reason: format!("must be nonnegative, got {lambda_affinity}"),
        });
    }

    let f = Array2::from_shape_vec((n, d), features.data().iter().map(|&v| v as f64).collect())
        .expect("tensor shape checked above");

    let mut raw = gram_matrix(&f);

    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi <= lo {
        return Err(Error::DegenerateAffinity);
    }
    let range = hi - lo;
    raw.par_mapv_inplace(|v| ((v - lo) / range).powf(alpha_power));

    let pre_degrees = row_sums(&raw);
    for i in 0..n {
        raw[[i, i]] += lambda_affinity * pre_degrees[i];
    }
    Ok(AffinityGraph::from_weights_unchecked(raw))
}

/// `F·Fᵀ` computed on the upper triangle and mirrored so the result is
/// bit-symmetric.
fn gram_matrix(f: &Array2<f64>) -> Array2<f64> {
    let n = f.nrows();
    let mut upper = vec![0.0; n * n];
    upper.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let fi = f.row(i);
        for (j, cell) in row.iter_mut().enumerate().skip(i) {
            *cell = fi.dot(&f.row(j));
        }
    });
    let mut out = Array2::from_shape_vec((n, n), upper).expect("n*n buffer");
    for i in 0..n {
        for j in 0..i {
            out[[i, j]] = out[[j, i]];
        }
    }
    out
}

/// Row sums in a fixed left-to-right order.
pub(crate) fn row_sums(w: &Array2<f64>) -> Array1<f64> {
    let sums: Vec<f64> = w
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| row.iter().sum())
        .collect();
    Array1::from(sums)
}

pub(crate) fn quadratic_form(w: &Array2<f64>, x: ArrayView1<f64>) -> f64 {
    w.dot(&x).dot(&x)
}
