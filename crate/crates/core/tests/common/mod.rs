//! Instance generators shared by the integration test targets.
#![allow(dead_code)]

use fracut::graph::AffinityGraph;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense symmetric graph: `A` with i.i.d. U[0,1] entries, symmetrized as
/// `(A + Aᵀ) / 2` (the diagonal keeps `A_ii`).
pub fn uniform_graph(n: usize, rng: &mut impl Rng) -> AffinityGraph {
    let a = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
    let w = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            a[[i, i]]
        } else {
            (a[[i, j]] + a[[j, i]]) / 2.0
        }
    });
    AffinityGraph::from_weights(w).expect("valid weights")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force minimum of a rows×cols cost matrix over all injective
/// assignments of the smaller side, summing in row order.
pub fn brute_force_assignment(costs: &[Vec<f64>]) -> f64 {
    let rows = costs.len();
    let cols = costs[0].len();
    if rows <= cols {
        let mut best = f64::INFINITY;
        let mut used = vec![false; cols];
        fn by_row(r: usize, acc: f64, costs: &[Vec<f64>], used: &mut [bool], best: &mut f64) {
            if r == costs.len() {
                *best = best.min(acc);
                return;
            }
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    by_row(r + 1, acc + costs[r][c], costs, used, best);
                    used[c] = false;
                }
            }
        }
        by_row(0, 0.0, costs, &mut used, &mut best);
        best
    } else {
        // Choose which row each column takes, then sum the chosen cells in row order.
        let mut best = f64::INFINITY;
        let mut row_to_col = vec![None; rows];
        fn by_col(
            c: usize,
            cols: usize,
            costs: &[Vec<f64>],
            row_to_col: &mut [Option<usize>],
            best: &mut f64,
        ) {
            if c == cols {
                let total = row_to_col
                    .iter()
                    .enumerate()
                    .filter_map(|(r, col)| col.map(|col| costs[r][col]))
                    .sum::<f64>();
                *best = best.min(total);
                return;
            }
            for r in 0..row_to_col.len() {
                if row_to_col[r].is_none() {
                    row_to_col[r] = Some(c);
                    by_col(c + 1, cols, costs, row_to_col, best);
                    row_to_col[r] = None;
                }
            }
        }
        by_col(0, cols, costs, &mut row_to_col, &mut best);
        best
    }
}

pub type Rng8 = ChaCha8Rng;
