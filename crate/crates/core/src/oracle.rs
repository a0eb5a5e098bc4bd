//! Reference partitioners for small graphs: exhaustive K-way Ncut and the
//! recursive spectral bipartition baseline.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;

pub const DEFAULT_MAX_NODES: usize = 12;

/// Hard partition with every cluster `0..k` nonempty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        let mut seen = vec![false; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::ShapeMismatch(format!(
                    "label {l} out of range for k = {k}"
                )));
            }
            seen[l] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InsufficientNodes {
                nodes: labels.len(),
                k,
            });
        }
        Ok(Self { labels, k })
    }

    pub fn ncut(&self, graph: &AffinityGraph) -> f64 {
        graph.ncut(&self.labels, self.k)
    }
}

/// Visits every surjective labeling of `n` nodes into `k` clusters exactly
/// once up to relabeling (restricted growth strings, node 0 in cluster 0),
/// in lexicographic order.
fn for_each_labeling(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    fn recurse(
        labels: &mut Vec<usize>,
        n: usize,
        k: usize,
        used: usize,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        let i = labels.len();
        if i == n {
            if used == k {
                visit(labels);
            }
            return;
        }
        // Not enough nodes left to open the remaining clusters.
        if k - used > n - i {
            return;
        }
        let limit = (used + 1).min(k);
        for l in 0..limit {
            labels.push(l);
            recurse(labels, n, k, used.max(l + 1), visit);
            labels.pop();
        }
    }
    let mut labels = Vec::with_capacity(n);
    recurse(&mut labels, n, k, 0, &mut visit);
}

fn check_enumerable(graph: &AffinityGraph, k: usize, max_nodes: usize) -> Result<()> {
    let n = graph.n_nodes();
    if n > max_nodes {
        return Err(Error::TooLarge {
            nodes: n,
            max: max_nodes,
        });
    }
    if k == 0 || k > n {
        return Err(Error::InsufficientNodes { nodes: n, k });
    }
    Ok(())
}

/// Globally optimal K-way normalized cut by exhaustive enumeration.
/// Ties keep the lexicographically smallest label vector.
pub fn exact_kway_ncut(
    graph: &AffinityGraph,
    k: usize,
    max_nodes: usize,
) -> Result<(Partition, f64)> {
    check_enumerable(graph, k, max_nodes)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_labeling(graph.n_nodes(), k, |labels| {
        let value = graph.ncut(labels, k);
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((labels.to_vec(), value));
        }
    });
    let (labels, value) = best.expect("k <= n guarantees at least one labeling");
    Ok((Partition { labels, k }, value))
}

/// Largest Rayleigh sum `Σ_k x_kᵀWx_k / x_kᵀDx_k` over the same enumeration.
pub fn exact_kway_rayleigh(
    graph: &AffinityGraph,
    k: usize,
    max_nodes: usize,
) -> Result<(Partition, f64)> {
    check_enumerable(graph, k, max_nodes)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_labeling(graph.n_nodes(), k, |labels| {
        let value = graph.rayleigh_sum(labels, k);
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((labels.to_vec(), value));
        }
    });
    let (labels, value) = best.expect("k <= n guarantees at least one labeling");
    Ok((Partition { labels, k }, value))
}

/// Diagnostics for one bipartition step.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitRecord {
    pub size: usize,
    /// True when the part was disconnected and split along a component.
    pub by_component: bool,
    /// Fiedler eigenvalue of the normalized Laplacian, when computed.
    pub eigenvalue: Option<f64>,
    /// `‖L_sym v − μ v‖` of the returned Fiedler pair.
    pub residual: Option<f64>,
}

/// Recursive two-way spectral Ncut: repeatedly splits the part with the
/// largest volume by the sign of its Fiedler vector until `k` parts exist.
pub fn spectral_recursive_ncut(graph: &AffinityGraph, k: usize) -> Result<Partition> {
    spectral_recursive_ncut_traced(graph, k).map(|(p, _)| p)
}

pub fn spectral_recursive_ncut_traced(
    graph: &AffinityGraph,
    k: usize,
) -> Result<(Partition, Vec<SplitRecord>)> {
    let n = graph.n_nodes();
    if k == 0 || k > n {
        return Err(Error::InsufficientNodes { nodes: n, k });
    }
    let degrees = graph.degrees();
    let volume = |part: &[usize]| part.iter().map(|&i| degrees[i]).sum::<f64>();

    let mut parts: Vec<Vec<usize>> = vec![(0..n).collect()];
    let mut records = Vec::with_capacity(k.saturating_sub(1));
    while parts.len() < k {
        let target = parts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.len() >= 2)
            .max_by(|(ia, a), (ib, b)| volume(a).total_cmp(&volume(b)).then_with(|| ib.cmp(ia)))
            .map(|(i, _)| i)
            .ok_or(Error::InsufficientNodes { nodes: n, k })?;
        let part = parts.swap_remove(target);
        let (left, right, record) = bipartition(graph, &part);
        records.push(record);
        parts.push(left);
        parts.push(right);
    }

    parts.sort_by_key(|p| p.iter().copied().min());
    let mut labels = vec![0; n];
    for (label, part) in parts.iter().enumerate() {
        for &i in part {
            labels[i] = label;
        }
    }
    Ok((Partition { labels, k }, records))
}

/// Splits `nodes` (len >= 2) in two nonempty halves.
fn bipartition(graph: &AffinityGraph, nodes: &[usize]) -> (Vec<usize>, Vec<usize>, SplitRecord) {
    let sub = graph.subgraph(nodes);
    let components = connected_components(&sub);
    if components.len() > 1 {
        let first = &components[0];
        let mut in_first = vec![false; nodes.len()];
        first.iter().for_each(|&i| in_first[i] = true);
        let (left, right): (Vec<_>, Vec<_>) = (0..nodes.len()).partition(|&i| in_first[i]);
        let record = SplitRecord {
            size: nodes.len(),
            by_component: true,
            eigenvalue: None,
            residual: None,
        };
        return (
            left.into_iter().map(|i| nodes[i]).collect(),
            right.into_iter().map(|i| nodes[i]).collect(),
            record,
        );
    }

    let (mu, v, residual) = fiedler_pair(&sub);
    let mut left: Vec<usize> = Vec::new();
    let mut right: Vec<usize> = Vec::new();
    for (i, &value) in v.iter().enumerate() {
        if value >= 0.0 {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    if left.is_empty() || right.is_empty() {
        // Degenerate sign pattern: fall back to splitting at the median entry.
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
        let half = nodes.len().div_ceil(2);
        left = order[..half].to_vec();
        right = order[half..].to_vec();
        left.sort_unstable();
        right.sort_unstable();
    }
    let record = SplitRecord {
        size: nodes.len(),
        by_component: false,
        eigenvalue: Some(mu),
        residual: Some(residual),
    };
    (
        left.into_iter().map(|i| nodes[i]).collect(),
        right.into_iter().map(|i| nodes[i]).collect(),
        record,
    )
}

/// Second-smallest eigenpair of `L_sym = I − D^{-1/2} W D^{-1/2}` and the
/// residual `‖L_sym v − μ v‖`. The vector's sign is fixed so its first
/// non-negligible entry is positive. Requires positive degrees.
pub fn fiedler_pair(graph: &AffinityGraph) -> (f64, Vec<f64>, f64) {
    let n = graph.n_nodes();
    let inv_sqrt: Vec<f64> = graph.degrees().iter().map(|&d| 1.0 / d.sqrt()).collect();
    let w = graph.weights();
    let lsym = DMatrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity - inv_sqrt[i] * w[[i, j]] * inv_sqrt[j]
    });
    // Symmetrize away rounding asymmetry before the eigensolve.
    let lsym = (&lsym + lsym.transpose()) * 0.5;
    let eig = SymmetricEigen::new(lsym.clone());

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let idx = order[1.min(n - 1)];
    let mu = eig.eigenvalues[idx];
    let mut v = eig.eigenvectors.column(idx).into_owned();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    let residual = (&lsym * &v - &v * mu).norm();
    // Entries of D^{-1/2}v share signs with v, so the split is read off v directly.
    (mu, v.iter().copied().collect(), residual)
}

/// Components over edges with positive off-diagonal weight, each sorted,
/// ordered by smallest member.
pub fn connected_components(graph: &AffinityGraph) -> Vec<Vec<usize>> {
    let n = graph.n_nodes();
    let w = graph.weights();
    let mut component = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        component[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if j != i && component[j] == usize::MAX && w[[i, j]] > 0.0 {
                    component[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}
