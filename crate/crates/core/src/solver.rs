//! Fractional alternating K-way normalized cut.
//!
//! The ratio objective `Σ_k x_kᵀWx_k / x_kᵀDx_k` is replaced by its quadratic
//! transform `Σ_k 2y_k√(x_kᵀWx_k) − y_k²·x_kᵀDx_k`, evaluated on columns
//! scaled to unit `D`-norm (`x_kᵀDx_k = 1`). On that normalization the
//! closed form `y_k = √(x_kᵀWx_k / x_kᵀDx_k)` is the exact maximizer and the
//! transform at the optimum equals the Rayleigh sum. The solver alternates
//! that maximization over `y`, a softmax update of the soft assignment `X`,
//! and an optional reweighting of `W` by assignment agreement.

use std::borrow::Cow;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;
use crate::tensor_io::PipelineConfig;

/// Half-width of the initialization noise, relative to the uniform value 1/K.
const INIT_NOISE: f64 = 0.05;

/// Unnormalized softmax terms below this are set to zero.
const PROBABILITY_FLOOR: f64 = 1e-100;

/// Largest entrywise assignment change still counted as settled. A
/// near-uniform assignment already scores close to K, so a flat objective
/// alone does not mean the partition has stopped moving.
const ASSIGNMENT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    /// `N×K`, rows on the probability simplex.
    pub assignment: Array2<f64>,
    /// One auxiliary scalar per cluster.
    pub aux: Array1<f64>,
}

impl SoftAssignment {
    pub fn new(assignment: Array2<f64>, aux: Array1<f64>) -> Result<Self> {
        if assignment.ncols() != aux.len() {
            return Err(Error::ShapeMismatch(format!(
                "assignment has {} columns but aux has {} entries",
                assignment.ncols(),
                aux.len()
            )));
        }
        Ok(Self { assignment, aux })
    }

    /// Seeded near-uniform rows: `1/K` plus noise in `±0.05/K`, renormalized.
    /// Auxiliary variables start at 1.
    pub fn seeded(n: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = 1.0 / k as f64;
        let half_width = INIT_NOISE * base;
        let mut x = Array2::from_shape_fn((n, k), |_| {
            base + rng.random_range(-half_width..=half_width)
        });
        for mut row in x.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            row /= s;
        }
        Self {
            assignment: x,
            aux: Array1::ones(k),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.assignment.nrows()
    }

    pub fn k(&self) -> usize {
        self.assignment.ncols()
    }

    /// Row-wise argmax, ties toward the smallest cluster index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.assignment
            .axis_iter(Axis(0))
            .map(|row| argmax(row.iter().copied()))
            .collect()
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations_run: usize,
    /// Quadratic-transform objective after each iteration, on the graph as it
    /// stands at the end of that iteration.
    pub objective_trace: Vec<f64>,
    /// Soft Rayleigh sum on the input graph after each iteration; together
    /// with the assignment change it drives the convergence test.
    pub rayleigh_trace: Vec<f64>,
    pub converged: bool,
}

/// Column quantities shared by the objective and both update phases.
struct ColumnStats {
    /// `W·X`
    wx: Array2<f64>,
    /// `x_kᵀWx_k`
    assoc: Array1<f64>,
    /// `x_kᵀDx_k`
    quad_volume: Array1<f64>,
    /// `Σ_j X_jk D_jj`
    volume: Array1<f64>,
}

impl ColumnStats {
    fn compute(graph: &AffinityGraph, x: &Array2<f64>) -> Result<Self> {
        if x.nrows() != graph.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "assignment has {} rows for a graph with {} nodes",
                x.nrows(),
                graph.n_nodes()
            )));
        }
        let wx = graph.weights().dot(x);
        let assoc = (&wx * x).sum_axis(Axis(0));
        let d = graph.degrees().view().insert_axis(Axis(1));
        let quad_volume = (&(x * x) * &d).sum_axis(Axis(0));
        let volume = (x * &d).sum_axis(Axis(0));
        Ok(Self {
            wx,
            assoc,
            quad_volume,
            volume,
        })
    }

    /// Per-column ratio `a_k / b_k`; 0 for a column with no volume.
    fn ratio(&self, k: usize) -> f64 {
        let b = self.quad_volume[k];
        if b > 0.0 {
            self.assoc[k].max(0.0) / b
        } else {
            0.0
        }
    }

    fn fqt(&self, aux: &Array1<f64>) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..aux.len() {
            let y = aux[k];
            total += 2.0 * y * self.ratio(k).sqrt() - y * y;
        }
        if total.is_finite() {
            Ok(total)
        } else {
            Err(Error::NonFiniteIntermediate(
                "quadratic-transform objective",
            ))
        }
    }

    fn rayleigh(&self) -> f64 {
        (0..self.assoc.len()).map(|k| self.ratio(k)).sum()
    }

    /// `y_k = √(a_k / b_k)`. With `guard`, zero-volume clusters use
    /// `b_k + epsilon` instead of failing.
    fn aux(&self, epsilon: f64, guard: bool) -> Result<Array1<f64>> {
        let mut y = Array1::zeros(self.assoc.len());
        for k in 0..y.len() {
            let (a, b) = (self.assoc[k].max(0.0), self.quad_volume[k]);
            y[k] = if b > epsilon {
                (a / b).sqrt()
            } else if guard {
                (a / (b.max(0.0) + epsilon)).sqrt()
            } else {
                return Err(Error::EmptyClusterVolume(k));
            };
        }
        Ok(y)
    }

    fn assignment(&self, aux: &Array1<f64>, temperature: f64, epsilon: f64) -> Result<Array2<f64>> {
        let scale: Array1<f64> = Zip::from(aux)
            .and(&self.volume)
            .map_collect(|&y, &v| y / ((v + epsilon) * temperature));
        let mut logits = &self.wx * &scale.view().insert_axis(Axis(0));
        logits
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .for_each(|mut row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                // Negligible probabilities are flushed to zero: their pairwise
                // products would underflow into slow subnormal arithmetic.
                row.mapv_inplace(|v| {
                    let e = (v - max).exp();
                    if e < PROBABILITY_FLOOR {
                        0.0
                    } else {
                        e
                    }
                });
                let s = row.sum();
                row /= s;
            });
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteIntermediate("assignment softmax"));
        }
        Ok(logits)
    }
}

/// `Σ_k (2y_k√(x̂_kᵀWx̂_k) − y_k²)` with `x̂_k = x_k / √(x_kᵀDx_k)`, i.e. the
/// quadratic transform on unit-`D`-norm columns. A column without volume
/// contributes `−y_k²`.
pub fn fqt_objective(graph: &AffinityGraph, asg: &SoftAssignment) -> Result<f64> {
    ColumnStats::compute(graph, &asg.assignment)?.fqt(&asg.aux)
}

/// Soft Rayleigh sum `Σ_k x_kᵀWx_k / x_kᵀDx_k`.
pub fn rayleigh_objective(graph: &AffinityGraph, asg: &SoftAssignment) -> Result<f64> {
    Ok(ColumnStats::compute(graph, &asg.assignment)?.rayleigh())
}

/// Closed-form optimal auxiliary variables for the current assignment; never
/// decreases [`fqt_objective`].
pub fn update_aux(
    graph: &AffinityGraph,
    asg: &SoftAssignment,
    epsilon: f64,
) -> Result<SoftAssignment> {
    let stats = ColumnStats::compute(graph, &asg.assignment)?;
    let aux = stats.aux(epsilon, false)?;
    Ok(SoftAssignment {
        assignment: asg.assignment.clone(),
        aux,
    })
}

/// Synchronous softmax update of every row from the previous assignment.
pub fn update_assignment(
    graph: &AffinityGraph,
    asg: &SoftAssignment,
    temperature: f64,
    epsilon: f64,
) -> Result<SoftAssignment> {
    let stats = ColumnStats::compute(graph, &asg.assignment)?;
    let assignment = stats.assignment(&asg.aux, temperature, epsilon)?;
    Ok(SoftAssignment {
        assignment,
        aux: asg.aux.clone(),
    })
}

/// Scales each edge by `exp(−(1 − cos_ij)² / β)`, where `cos_ij` is the cosine
/// between assignment rows `i` and `j`. Degrees are recomputed.
pub fn reweight_graph(
    graph: &AffinityGraph,
    asg: &SoftAssignment,
    beta: f64,
    epsilon: f64,
) -> Result<AffinityGraph> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvariantViolation {
            field: "beta_reweight",
            reason: format!("reweighting needs a positive bandwidth, got {beta}"),
        });
    }
    let x = &asg.assignment;
    let n = graph.n_nodes();
    if x.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "assignment has {} rows for {n} nodes",
            x.nrows()
        )));
    }
    let mut unit = x.clone();
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if norm <= epsilon {
            return Err(Error::ZeroRowNorm(i));
        }
        row /= norm;
    }
    let cosines = unit.dot(&unit.t());
    let w = graph.weights();

    // Factors come from the upper triangle only, so the result stays exactly symmetric.
    let mut out = Array2::zeros((n, n));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                let factor = if a == b {
                    1.0
                } else {
                    let c = cosines[[a, b]].clamp(-1.0, 1.0);
                    (-(1.0 - c).powi(2) / beta).exp()
                };
                row[j] = w[[a, b]] * factor;
            }
        });
    Ok(AffinityGraph::from_weights_unchecked(out))
}

/// Runs the alternating cut from a seeded initialization for up to
/// `config.t_cuts` iterations.
pub fn solve(
    graph: &AffinityGraph,
    config: &PipelineConfig,
) -> Result<(SoftAssignment, SolveReport)> {
    config.validate()?;
    let k = config.k_clusters;
    let mut asg = SoftAssignment::seeded(graph.n_nodes(), k, config.seed);
    let mut report = SolveReport {
        iterations_run: 0,
        objective_trace: Vec::with_capacity(config.t_cuts),
        rayleigh_trace: Vec::with_capacity(config.t_cuts),
        converged: false,
    };
    if config.t_cuts == 0 {
        return Ok((asg, report));
    }

    let reweight = config.reweighting_enabled();
    let mut current: Cow<'_, AffinityGraph> = Cow::Borrowed(graph);
    let mut stats = ColumnStats::compute(&current, &asg.assignment)?;
    let mut previous_rayleigh = stats.rayleigh();

    for _ in 0..config.t_cuts {
        let aux = stats.aux(config.epsilon, true)?;
        let assignment = stats.assignment(&aux, config.softmax_temperature, config.epsilon)?;
        let moved = (&assignment - &asg.assignment)
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        asg = SoftAssignment { assignment, aux };

        if reweight {
            current = Cow::Owned(reweight_graph(
                &current,
                &asg,
                config.beta_reweight,
                config.epsilon,
            )?);
        }
        stats = ColumnStats::compute(&current, &asg.assignment)?;
        report.objective_trace.push(stats.fqt(&asg.aux)?);

        let rayleigh = if reweight {
            ColumnStats::compute(graph, &asg.assignment)?.rayleigh()
        } else {
            stats.rayleigh()
        };
        report.rayleigh_trace.push(rayleigh);
        report.iterations_run += 1;

        let change =
            (rayleigh - previous_rayleigh).abs() / previous_rayleigh.abs().max(f64::MIN_POSITIVE);
        previous_rayleigh = rayleigh;
        if change < config.objective_tol && moved <= ASSIGNMENT_TOL {
            report.converged = true;
            break;
        }
    }
    Ok((asg, report))
}
