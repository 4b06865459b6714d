//! Parameter-free accessory classifiers over the model's feature space, and
//! the enhanced indicator that averages them with the network head.
//!
//! Label propagation minimizes
//!
//! ```text
//! sum_i ||F_i - Y_i||^2 + lambda * sum_ij a_ij || F_i / sqrt(d_ii) - F_j / sqrt(d_jj) ||^2
//! ```
//!
//! With symmetric `A` the smoothness term equals `2 tr(F^T (I - S) F)` where
//! `S = D^-1/2 A D^-1/2`. We absorb the factor 2 into `lambda`, so setting the
//! gradient to zero gives `(F - Y) + lambda (I - S) F = 0`, i.e.
//! `F = (I + lambda (I - S))^-1 Y`. The matrix is symmetric positive definite
//! for `lambda >= 0` because the spectrum of `S` lies in `[-1, 1]`.
//!
//! Writing `alpha = lambda / (1 + lambda)` the same solution is the fixed
//! point of `F <- alpha S F + (1 - alpha) Y`, which converges geometrically
//! at rate `alpha < 1`.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{invalid, Error, Result};
use crate::model::Classifier;
use crate::par;
use crate::selection::{squared_distance, Kernel};

/// Largest graph solved with the dense factorization.
pub const DENSE_SOLVE_LIMIT: usize = 4000;
pub const KMEANS_MAX_ITER: usize = 100;
const NORM_GUARD: f64 = 1e-12;
const DEGREE_FLOOR: f64 = 1e-12;
const AFFINITY_BLOCK: usize = 256;

/// k-means in feature space, warm-started at the labeled class means.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub target_centers: Array2<f64>,
    pub source_centers: Array2<f64>,
    pub iterations_run: usize,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub kernel: Kernel,
}

fn nearest(point: ArrayView1<'_, f64>, centers: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.rows().into_iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

impl ClusterModel {
    /// Lloyd's algorithm on `target` initialized at the per-class means of
    /// `source`; stops when assignments repeat or after `max_iter` updates.
    /// A cluster that loses all its members keeps its previous center.
    pub fn fit(
        source: ArrayView2<'_, f64>,
        source_labels: &[usize],
        target: ArrayView2<'_, f64>,
        num_classes: usize,
        max_iter: usize,
        kernel: Kernel,
    ) -> Result<Self> {
        if source.ncols() != target.ncols() {
            return Err(invalid!("source and target feature widths differ"));
        }
        let mut source_centers = Array2::zeros((num_classes, source.ncols()));
        let mut counts = vec![0usize; num_classes];
        for (row, &y) in source.rows().into_iter().zip(source_labels) {
            let mut c = source_centers.row_mut(y);
            c += &row;
            counts[y] += 1;
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(invalid!("class {k} has no labeled samples to seed its cluster"));
        }
        for (mut c, &n) in source_centers.rows_mut().into_iter().zip(&counts) {
            c /= n as f64;
        }

        let mut centers = source_centers.clone();
        let mut assignment: Option<Vec<usize>> = None;
        let mut inertia_history = Vec::new();
        let mut iterations_run = 0;
        while iterations_run < max_iter {
            let nearest_all = par::map_range(target.nrows(), |i| nearest(target.row(i), centers.view()));
            inertia_history.push(nearest_all.iter().map(|&(_, d)| d).sum());
            let next: Vec<usize> = nearest_all.into_iter().map(|(k, _)| k).collect();
            if assignment.as_ref() == Some(&next) {
                break;
            }
            let mut sums = Array2::zeros(centers.raw_dim());
            let mut members = vec![0usize; num_classes];
            for (row, &k) in target.rows().into_iter().zip(&next) {
                let mut s = sums.row_mut(k);
                s += &row;
                members[k] += 1;
            }
            for k in 0..num_classes {
                if members[k] > 0 {
                    let mean = &sums.row(k) / members[k] as f64;
                    centers.row_mut(k).assign(&mean);
                }
            }
            assignment = Some(next);
            iterations_run += 1;
        }
        Ok(Self {
            target_centers: centers,
            source_centers,
            iterations_run,
            inertia_history,
            kernel,
        })
    }

    /// Kernel probabilities over the target centers.
    pub fn predict(&self, feature: ArrayView1<'_, f64>) -> Array1<f64> {
        let d2: Vec<f64> = self
            .target_centers
            .rows()
            .into_iter()
            .map(|c| squared_distance(feature, c))
            .collect();
        Array1::from(self.kernel.probabilities(&d2, None))
    }

    pub fn predict_batch(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let rows = par::map_range(features.nrows(), |i| self.predict(features.row(i)));
        let mut out = Array2::zeros((features.nrows(), self.target_centers.nrows()));
        for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&src);
        }
        out
    }
}

pub fn fit_clusters(
    model: &Classifier,
    source: &LabeledSet,
    target: &UnlabeledSet,
    kernel: Kernel,
) -> Result<ClusterModel> {
    let fs = model.features(source.features())?;
    let ft = model.features(target.features())?;
    ClusterModel::fit(
        fs.view(),
        source.labels(),
        ft.view(),
        model.num_classes(),
        KMEANS_MAX_ITER,
        kernel,
    )
}

pub fn cluster_predict(cm: &ClusterModel, feature: ArrayView1<'_, f64>) -> Array1<f64> {
    cm.predict(feature)
}

/// Cosine-affinity graph over labeled rows followed by unlabeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationGraph {
    pub affinity: Array2<f64>,
    pub degree: Array1<f64>,
    /// One-hot rows for labeled nodes, zero rows for unlabeled ones.
    pub labels: Array2<f64>,
    pub lambda: f64,
}

impl PropagationGraph {
    /// `a_ij = max(0, cos(x_i, x_j))` off the diagonal, `a_ii = 0`.
    pub fn from_features(
        labeled: ArrayView2<'_, f64>,
        labels: &[usize],
        unlabeled: ArrayView2<'_, f64>,
        num_classes: usize,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid!("lambda must be a finite non-negative number, got {lambda}"));
        }
        if labeled.ncols() != unlabeled.ncols() {
            return Err(invalid!("labeled and unlabeled feature widths differ"));
        }
        if labels.len() != labeled.nrows() {
            return Err(invalid!("{} labels for {} labeled rows", labels.len(), labeled.nrows()));
        }
        let mut x = ndarray::concatenate(Axis(0), &[labeled, unlabeled]).expect("same width");
        for mut row in x.rows_mut() {
            let norm = row.dot(&row).sqrt().max(NORM_GUARD);
            row /= norm;
        }
        let n = x.nrows();
        let xt = x.t();
        let blocks = par::map_range(n.div_ceil(AFFINITY_BLOCK), |b| {
            let lo = b * AFFINITY_BLOCK;
            let hi = (lo + AFFINITY_BLOCK).min(n);
            x.slice(s![lo..hi, ..]).dot(&xt)
        });
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        let mut affinity = ndarray::concatenate(Axis(0), &views).expect("same width");
        for i in 0..n {
            affinity[[i, i]] = 0.0;
            for j in 0..i {
                let v = (0.5 * (affinity[[i, j]] + affinity[[j, i]])).max(0.0);
                affinity[[i, j]] = v;
                affinity[[j, i]] = v;
            }
        }
        let degree = affinity.sum_axis(Axis(1)).mapv(|d| d.max(DEGREE_FLOOR));
        let mut y = Array2::zeros((n, num_classes));
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(invalid!("label {label} out of range for {num_classes} classes"));
            }
            y[[i, label]] = 1.0;
        }
        Ok(Self {
            affinity,
            degree,
            labels: y,
            lambda,
        })
    }

    pub fn len(&self) -> usize {
        self.affinity.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `S = D^-1/2 A D^-1/2`.
    pub fn normalized_affinity(&self) -> Array2<f64> {
        let inv_sqrt = self.degree.mapv(|d| 1.0 / d.sqrt());
        let mut s = self.affinity.clone();
        for ((i, j), v) in s.indexed_iter_mut() {
            *v *= inv_sqrt[i] * inv_sqrt[j];
        }
        s
    }

    /// Nonzero affinities as `i,j,a_ij` rows.
    pub fn write_affinity_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("i,j,a_ij\n");
        for ((i, j), &v) in self.affinity.indexed_iter() {
            if v != 0.0 {
                out.push_str(&format!("{i},{j},{v:?}\n"));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn build_graph(
    model: &Classifier,
    source: &LabeledSet,
    target: &UnlabeledSet,
    lambda: f64,
) -> Result<PropagationGraph> {
    let fs = model.features(source.features())?;
    let ft = model.features(target.features())?;
    PropagationGraph::from_features(fs.view(), source.labels(), ft.view(), model.num_classes(), lambda)
}

/// `F = (I + lambda (I - S))^-1 Y` via a Cholesky solve.
pub fn propagate_closed_form(g: &PropagationGraph) -> Result<Array2<f64>> {
    let n = g.len();
    if n > DENSE_SOLVE_LIMIT {
        return Err(invalid!(
            "graph of {n} nodes exceeds the dense solve limit {DENSE_SOLVE_LIMIT}"
        ));
    }
    if g.lambda == 0.0 {
        return Ok(g.labels.clone());
    }
    let s = g.normalized_affinity();
    let lambda = g.lambda;
    let system = DMatrix::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 + lambda } else { 0.0 };
        identity - lambda * s[[i, j]]
    });
    let k = g.labels.ncols();
    let rhs = DMatrix::from_fn(n, k, |i, j| g.labels[[i, j]]);
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Numeric("propagation system is not positive definite".into()))?;
    let solution = chol.solve(&rhs);
    Ok(Array2::from_shape_fn((n, k), |(i, j)| solution[(i, j)]))
}

/// Result of the fixed-point solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub scores: Array2<f64>,
    pub iterations: usize,
    /// False when `max_iter` was reached before the change fell below `tol`.
    pub converged: bool,
}

/// Fixed-point iteration from `F = Y`.
pub fn propagate_iterative(g: &PropagationGraph, tol: f64, max_iter: usize) -> Propagation {
    propagate_iterative_from(g, g.labels.clone(), tol, max_iter)
}

/// Fixed-point iteration `F <- alpha S F + (1 - alpha) Y` from `init`.
pub fn propagate_iterative_from(g: &PropagationGraph, init: Array2<f64>, tol: f64, max_iter: usize) -> Propagation {
    let alpha = g.lambda / (1.0 + g.lambda);
    let mut s = g.normalized_affinity();
    s *= alpha;
    let anchor = &g.labels * (1.0 - alpha);
    let mut f = init;
    for iteration in 1..=max_iter {
        let next = s.dot(&f) + &anchor;
        let change = next.iter().zip(f.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        f = next;
        if change < tol {
            return Propagation {
                scores: f,
                iterations: iteration,
                converged: true,
            };
        }
    }
    Propagation {
        scores: f,
        iterations: max_iter,
        converged: false,
    }
}

/// How to solve the propagation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Dense solve up to [`DENSE_SOLVE_LIMIT`] nodes, fixed-point iteration above.
    #[default]
    Auto,
    ClosedForm,
    Iterative,
}

pub const ITERATIVE_TOL: f64 = 1e-10;
pub const ITERATIVE_MAX_ITER: usize = 10_000;

pub fn propagate(g: &PropagationGraph, solver: Solver) -> Result<Array2<f64>> {
    let dense = match solver {
        Solver::Auto => g.len() <= DENSE_SOLVE_LIMIT,
        Solver::ClosedForm => true,
        Solver::Iterative => false,
    };
    if dense {
        propagate_closed_form(g)
    } else {
        Ok(propagate_iterative(g, ITERATIVE_TOL, ITERATIVE_MAX_ITER).scores)
    }
}

/// A normalized row of the propagation scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RowPrediction {
    pub probs: Array1<f64>,
    /// Set when the row summed to zero and a uniform vector was returned.
    pub uniform_fallback: bool,
}

pub fn propagation_predict(scores: ArrayView2<'_, f64>, row: usize) -> RowPrediction {
    let r = scores.row(row);
    let sum: f64 = r.iter().map(|v| v.max(0.0)).sum();
    if sum > 0.0 && sum.is_finite() {
        RowPrediction {
            probs: r.mapv(|v| v.max(0.0) / sum),
            uniform_fallback: false,
        }
    } else {
        RowPrediction {
            probs: Array1::from_elem(r.len(), 1.0 / r.len() as f64),
            uniform_fallback: true,
        }
    }
}

/// Elementwise mean of the three heads.
pub fn average_heads(
    model: ArrayView1<'_, f64>,
    cluster: ArrayView1<'_, f64>,
    propagation: ArrayView1<'_, f64>,
) -> Array1<f64> {
    (&model + &cluster + propagation) / 3.0
}

/// Enhanced probabilities for one target sample, where `row` is the sample's
/// node index in the propagation graph.
pub fn enhanced_indicator(
    model: &Classifier,
    cm: &ClusterModel,
    scores: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    row: usize,
) -> Result<Array1<f64>> {
    let out = model.forward(x)?;
    let cluster = cm.predict(out.features.view());
    let prop = propagation_predict(scores, row);
    Ok(average_heads(out.probs.view(), cluster.view(), prop.probs.view()))
}

/// Both accessory heads fitted for one stage.
#[derive(Debug, Clone)]
pub struct ImplicitEnsemble {
    pub clusters: ClusterModel,
    pub propagation: Array2<f64>,
    pub labeled_rows: usize,
    pub uniform_fallbacks: usize,
}

impl ImplicitEnsemble {
    /// Fits the cluster head and the propagation head from precomputed
    /// features of the labeled pool and of the unlabeled targets.
    pub fn fit(
        labeled_features: ArrayView2<'_, f64>,
        labels: &[usize],
        target_features: ArrayView2<'_, f64>,
        num_classes: usize,
        lambda: f64,
        kernel: Kernel,
        solver: Solver,
    ) -> Result<Self> {
        let clusters = ClusterModel::fit(
            labeled_features,
            labels,
            target_features,
            num_classes,
            KMEANS_MAX_ITER,
            kernel,
        )?;
        let graph = PropagationGraph::from_features(labeled_features, labels, target_features, num_classes, lambda)?;
        let propagation = propagate(&graph, solver)?;
        Ok(Self {
            clusters,
            propagation,
            labeled_rows: labeled_features.nrows(),
            uniform_fallbacks: 0,
        })
    }

    /// Enhanced probabilities for every target, given the head's probabilities
    /// and features for the same rows.
    pub fn enhance(&mut self, model_probs: ArrayView2<'_, f64>, target_features: ArrayView2<'_, f64>) -> Array2<f64> {
        let cluster = self.clusters.predict_batch(target_features);
        let mut out = Array2::zeros(model_probs.raw_dim());
        let mut fallbacks = 0;
        for i in 0..model_probs.nrows() {
            let prop = propagation_predict(self.propagation.view(), self.labeled_rows + i);
            fallbacks += usize::from(prop.uniform_fallback);
            out.row_mut(i)
                .assign(&average_heads(model_probs.row(i), cluster.row(i), prop.probs.view()));
        }
        self.uniform_fallbacks = fallbacks;
        out
    }
}

/// Dense `F` as CSV with columns `k0..k{K-1}`.
pub fn write_scores_csv(scores: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    let header: Vec<String> = (0..scores.ncols()).map(|k| format!("k{k}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in scores.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kmeans_fixed_point() {
        let src = array![[0.0, 0.0], [5.0, 5.0]];
        let cm = ClusterModel::fit(src.view(), &[0, 1], src.view(), 2, 100, Kernel::SoftmaxNegSq).unwrap();
        assert_eq!(cm.target_centers, src);
        assert_eq!(cm.iterations_run, 1);
    }

    #[test]
    fn kmeans_hand_run_line() {
        // Oracle by hand: seeds 0.4 / 9.6 assign {0,1} and {9,10}; means 0.5 / 9.5;
        // the next assignment is identical, so Lloyd stops.
        let src = array![[0.4], [9.6]];
        let tgt = array![[0.0], [1.0], [9.0], [10.0]];
        let cm = ClusterModel::fit(src.view(), &[0, 1], tgt.view(), 2, 100, Kernel::SoftmaxNegSq).unwrap();
        assert_eq!(cm.target_centers, array![[0.5], [9.5]]);
        assert_eq!(cm.source_centers, src);
    }

    #[test]
    fn kmeans_empty_cluster_keeps_center() {
        let src = array![[0.0], [100.0]];
        let tgt = array![[0.0], [1.0], [2.0]];
        let cm = ClusterModel::fit(src.view(), &[0, 1], tgt.view(), 2, 100, Kernel::SoftmaxNegSq).unwrap();
        assert_eq!(cm.target_centers[[1, 0]], 100.0);
        assert_eq!(cm.target_centers[[0, 0]], 1.0);
        assert!(ClusterModel::fit(src.view(), &[0, 0], tgt.view(), 2, 100, Kernel::SoftmaxNegSq).is_err());
    }

    #[test]
    fn cluster_prediction() {
        let src = array![[1.0, 0.0], [-1.0, 0.0]];
        let cm = ClusterModel::fit(src.view(), &[0, 1], src.view(), 2, 100, Kernel::SoftmaxNegSq).unwrap();
        let p = cm.predict(array![0.0, 3.0].view());
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let q = cm.predict(array![-1.0, 0.0].view());
        assert!(q[1] > q[0]);
        assert!((q.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn affinities() {
        let l = array![[1.0, 0.0], [1.0, 0.0]];
        let u = array![[0.0, 1.0], [-1.0, 0.0]];
        let g = PropagationGraph::from_features(l.view(), &[0, 1], u.view(), 2, 1.0).unwrap();
        assert_eq!(g.affinity[[0, 1]], 1.0);
        assert_eq!(g.affinity[[0, 2]], 0.0);
        assert_eq!(g.affinity[[0, 3]], 0.0);
        assert_eq!(g.affinity[[2, 2]], 0.0);
        assert_eq!(g.labels, array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]);
        assert!(g.degree.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn lambda_zero_returns_labels() {
        let l = array![[1.0, 0.2], [0.3, 1.0]];
        let u = array![[1.0, 1.0]];
        let g = PropagationGraph::from_features(l.view(), &[0, 1], u.view(), 2, 0.0).unwrap();
        assert_eq!(propagate_closed_form(&g).unwrap(), g.labels);
        let it = propagate_iterative(&g, 1e-12, 10);
        assert_eq!(it.scores, g.labels);
        assert_eq!(it.iterations, 1);
    }

    #[test]
    fn no_edges_scales_labels() {
        // Mutually orthogonal features: A = 0, so F = Y / (1 + lambda).
        let l = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let u = array![[0.0, 0.0, 1.0]];
        let g = PropagationGraph::from_features(l.view(), &[0, 1], u.view(), 2, 3.0).unwrap();
        let f = propagate_closed_form(&g).unwrap();
        for (a, b) in f.iter().zip(g.labels.iter()) {
            assert!((a - b / 4.0).abs() < 1e-15);
        }
    }

    #[test]
    fn path_graph_symmetry() {
        let mut g = PropagationGraph {
            affinity: array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
            degree: array![1.0, 2.0, 1.0],
            labels: array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]],
            lambda: 1.0,
        };
        let f = propagate_closed_form(&g).unwrap();
        assert!((f[[1, 0]] - f[[1, 1]]).abs() < 1e-12);
        // Independent oracle: Gaussian elimination on the 3x3 system per class.
        let s = g.normalized_affinity();
        for class in 0..2 {
            let mut m = [[0.0f64; 4]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] = if i == j { 2.0 } else { 0.0 } - s[[i, j]];
                }
                m[i][3] = g.labels[[i, class]];
            }
            for p in 0..3 {
                for r in 0..3 {
                    if r != p {
                        let factor = m[r][p] / m[p][p];
                        for c in 0..4 {
                            m[r][c] -= factor * m[p][c];
                        }
                    }
                }
            }
            for i in 0..3 {
                assert!((f[[i, class]] - m[i][3] / m[i][i]).abs() < 1e-12);
            }
        }
        g.lambda = 0.0;
        assert_eq!(propagate_closed_form(&g).unwrap(), g.labels);
    }

    #[test]
    fn iterative_from_fixed_point_does_not_move() {
        let l = array![[1.0, 0.1], [0.2, 1.0]];
        let u = array![[1.0, 1.0], [0.5, 0.7]];
        let g = PropagationGraph::from_features(l.view(), &[0, 1], u.view(), 2, 2.0).unwrap();
        let exact = propagate_closed_form(&g).unwrap();
        let it = propagate_iterative_from(&g, exact.clone(), 1e-9, 5);
        assert_eq!(it.iterations, 1);
        assert!(it.converged);
        let capped = propagate_iterative(&g, 0.0, 3);
        assert!(!capped.converged);
    }

    #[test]
    fn row_normalization() {
        let f = array![[0.2, 0.2], [0.3, 0.1], [0.0, 0.0]];
        assert_eq!(propagation_predict(f.view(), 0).probs, array![0.5, 0.5]);
        let r = propagation_predict(f.view(), 1).probs;
        assert!((r[0] - 0.75).abs() < 1e-12 && (r[1] - 0.25).abs() < 1e-12);
        let z = propagation_predict(f.view(), 2);
        assert!(z.uniform_fallback);
        assert_eq!(z.probs, array![0.5, 0.5]);
    }

    #[test]
    fn heads_average() {
        let p = array![0.2, 0.8];
        let same = average_heads(p.view(), p.view(), p.view());
        assert!(same.iter().zip(&p).all(|(a, b)| (a - b).abs() < 1e-15));
        let m = average_heads(
            array![1.0, 0.0].view(),
            array![0.0, 1.0].view(),
            array![0.5, 0.5].view(),
        );
        assert_eq!(m, array![0.5, 0.5]);
    }
}
