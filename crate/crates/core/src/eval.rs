//! Optimal cluster-to-class matching and mean IoU.

use crate::error::{Error, Result};
use crate::maskgen::LabelMask;

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || costs.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} cost matrix with {} entries",
                costs.len()
            )));
        }
        if let Some(p) = costs.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteCost(p / cols, p % cols));
        }
        Ok(Self { rows, cols, costs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged cost rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.costs[r * self.cols + c]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(row, col)` pairs sorted by row.
    pub assignment: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum-cost one-to-one assignment (Kuhn–Munkres with potentials, O(n³)).
///
/// Rectangular inputs are padded to square with `max + 1`; padded pairs are
/// dropped, leaving `min(rows, cols)` pairs.
pub fn hungarian_match(costs: &CostMatrix) -> MatchResult {
    let n = costs.rows.max(costs.cols);
    let pad = costs
        .costs
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let cost = |r: usize, c: usize| {
        if r < costs.rows && c < costs.cols {
            costs.get(r, c)
        } else {
            pad
        }
    };

    // 1-based arrays; column 0 is a virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost(r0 - 1, col - 1) - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[row_of_col[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            row_of_col[col0] = row_of_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment: Vec<(usize, usize)> = (1..=n)
        .filter(|&c| row_of_col[c] != 0)
        .map(|c| (row_of_col[c] - 1, c - 1))
        .filter(|&(r, c)| r < costs.rows && c < costs.cols)
        .collect();
    assignment.sort_unstable();
    let total_cost = assignment.iter().map(|&(r, c)| costs.get(r, c)).sum();
    MatchResult {
        assignment,
        total_cost,
    }
}

/// Mean IoU over ground-truth classes present in `gt`, after matching
/// predicted clusters to classes to maximize total IoU.
///
/// With `many_to_one_background`, predicted clusters left unmatched are merged
/// into `background_class`; otherwise they predict nothing.
pub fn miou(
    pred: &LabelMask,
    gt: &LabelMask,
    gt_classes: usize,
    many_to_one_background: bool,
    background_class: Option<usize>,
) -> Result<f64> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::ShapeMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let background = match (many_to_one_background, background_class) {
        (true, None) => return Err(Error::BackgroundClassRequired),
        (true, Some(b)) => Some(b),
        (false, _) => None,
    };
    let classes = gt_classes
        .max(gt.label_bound())
        .max(background.map_or(0, |b| b + 1));
    let clusters = pred.label_bound();

    let mut inter = vec![0usize; clusters * classes];
    let mut pred_count = vec![0usize; clusters];
    let mut gt_count = vec![0usize; classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        inter[p * classes + g] += 1;
        pred_count[p] += 1;
        gt_count[g] += 1;
    }
    let iou = |p: usize, g: usize| {
        let i = inter[p * classes + g];
        let union = pred_count[p] + gt_count[g] - i;
        if union == 0 {
            0.0
        } else {
            i as f64 / union as f64
        }
    };
    let neg_iou: Vec<f64> = (0..clusters)
        .flat_map(|p| (0..classes).map(move |g| (p, g)))
        .map(|(p, g)| -iou(p, g))
        .collect();
    let matching = hungarian_match(&CostMatrix::new(clusters, classes, neg_iou)?);

    let mut class_of_cluster: Vec<Option<usize>> = vec![background; clusters];
    for &(p, g) in &matching.assignment {
        class_of_cluster[p] = Some(g);
    }

    let mut final_inter = vec![0usize; classes];
    let mut final_pred = vec![0usize; classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if let Some(mapped) = class_of_cluster[p] {
            final_pred[mapped] += 1;
            if mapped == g {
                final_inter[g] += 1;
            }
        }
    }
    let present: Vec<usize> = (0..classes).filter(|&g| gt_count[g] > 0).collect();
    if present.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = present
        .iter()
        .map(|&g| {
            let union = final_pred[g] + gt_count[g] - final_inter[g];
            final_inter[g] as f64 / union as f64
        })
        .sum();
    Ok(total / present.len() as f64)
}
