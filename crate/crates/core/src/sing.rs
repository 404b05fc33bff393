//! The non-iterative and iterative structure-learning drivers.
//!
//! One iteration: permute the (standardized) columns by the current ordering,
//! fit a map under the current sparsity pattern, estimate scores and
//! variances, threshold, and map the kept edges back to the original labels.
//! The next ordering comes from the estimated graph and the next pattern from
//! the elimination bound of the relabeled graph. Iteration stops as soon as
//! the edge count fails to decrease.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datasets::SampleMatrix;
use crate::graph::{relabel, reverse_cholesky_ordering, sparsity_bound, Ordering, UndirectedGraph};
use crate::numerics::Matrix;
use crate::optimize::{fisher_information, fit_map_with, FitOptions};
use crate::score::{estimate_variances, threshold, ScoreMatrix};
use crate::transport::{SparsityPattern, DEFAULT_QUADRATURE_ORDER};
use crate::{Error, Result};

/// Columns with a smaller empirical standard deviation are rejected.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SingConfig {
    /// Total degree β of the map components.
    pub degree: u32,
    /// Constant in `f(n) = c·√(log n)`.
    pub c: f64,
    /// Offset added to every threshold.
    pub tau0: f64,
    pub max_iterations: usize,
    pub quadrature_order: usize,
    /// Recorded with results; the drivers themselves draw no random numbers.
    pub seed: u64,
}

impl Default for SingConfig {
    fn default() -> Self {
        SingConfig { degree: 1, c: 1.0, tau0: 0.0, max_iterations: 10, quadrature_order: DEFAULT_QUADRATURE_ORDER, seed: 0 }
    }
}

impl SingConfig {
    pub fn with_degree(degree: u32) -> Self {
        SingConfig { degree, ..SingConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 1 {
            return Err(Error::InvalidParameter("degree must be at least 1"));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter("threshold constant must be positive"));
        }
        if !(self.tau0 >= 0.0) {
            return Err(Error::InvalidParameter("threshold offset must be non-negative"));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1"));
        }
        if self.quadrature_order < 1 {
            return Err(Error::InvalidParameter("quadrature order must be at least 1"));
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions { quadrature_order: self.quadrature_order, ..FitOptions::default() }
    }
}

/// Column means and standard deviations removed by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Centers and scales every column to unit variance (`1/n` moments).
pub fn standardize(data: &SampleMatrix) -> Result<(SampleMatrix, Standardization)> {
    let (n, d) = (data.n(), data.d());
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let mut mean = alloc::vec![0.0; d];
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = alloc::vec![0.0; d];
    for row in data.rows() {
        for j in 0..d {
            let r = row[j] - mean[j];
            var[j] += r * r;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| libm::sqrt(v / n as f64)).collect();
    if let Some(column) = std.iter().position(|s| !(*s >= DEGENERATE_STD)) {
        return Err(Error::DegenerateColumn { column });
    }
    let mut values = Vec::with_capacity(n * d);
    for row in data.rows() {
        values.extend((0..d).map(|j| (row[j] - mean[j]) / std[j]));
    }
    Ok((SampleMatrix::new(n, d, values)?, Standardization { mean, std }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EdgeCountNonDecreasing,
    MaxIterations,
}

/// Everything computed in one iteration. Matrices and edges use the
/// original variable labels; `pattern` is in the permuted labels the map
/// was fitted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub ordering: Ordering,
    pub pattern: SparsityPattern,
    pub score: ScoreMatrix,
    pub tau: Matrix,
    pub edges: UndirectedGraph,
    pub edge_count: usize,
    pub objective: f64,
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingReport {
    pub config: SingConfig,
    pub standardization: Standardization,
    pub iterations: Vec<IterationRecord>,
    pub final_edges: UndirectedGraph,
    pub stopped_reason: StopReason,
}

// Entry (a, b) of `m` (permuted labels) moves to (perm[a], perm[b]).
fn unpermute(m: &Matrix, o: &Ordering) -> Matrix {
    let p = o.as_slice();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for a in 0..m.rows() {
        for b in 0..m.cols() {
            out[(p[a], p[b])] = m[(a, b)];
        }
    }
    out
}

fn run_iteration(
    std_data: &SampleMatrix,
    ordering: Ordering,
    pattern: SparsityPattern,
    cfg: &SingConfig,
) -> Result<IterationRecord> {
    let data = if ordering.is_identity() { std_data.clone() } else { std_data.permute_columns(ordering.as_slice())? };
    let fit = fit_map_with(&data, &pattern, cfg.degree, &cfg.fit_options())?;
    let fisher = fisher_information(&fit.map, &data)?;
    let score = estimate_variances(&fit.map, &data, &fisher)?;
    let thr = threshold(&score, cfg.c, cfg.tau0)?;
    let edges = relabel(&thr.kept, &ordering.inverse())?;
    let variance = thr.base.variance().map(|v| unpermute(v, &ordering));
    let score = ScoreMatrix::from_parts(score.n(), unpermute(score.omega(), &ordering), variance)?;
    Ok(IterationRecord {
        tau: unpermute(&thr.tau, &ordering),
        edge_count: edges.num_edges(),
        edges,
        score,
        ordering,
        pattern,
        objective: fit.objective,
        converged: fit.converged,
    })
}

fn check_input(data: &SampleMatrix, cfg: &SingConfig) -> Result<()> {
    cfg.validate()?;
    if data.n() < 2 {
        return Err(Error::InsufficientData { needed: 2, found: data.n() });
    }
    if data.d() < 2 {
        return Err(Error::InvalidParameter("structure learning needs at least two variables"));
    }
    Ok(())
}

/// One pass with a dense map: the estimated graph and its score matrix.
pub fn n_sing(data: &SampleMatrix, cfg: &SingConfig) -> Result<(UndirectedGraph, ScoreMatrix)> {
    check_input(data, cfg)?;
    let (std_data, _) = standardize(data)?;
    let d = data.d();
    let rec = run_iteration(&std_data, Ordering::identity(d), SparsityPattern::dense(d), cfg)?;
    Ok((rec.edges, rec.score))
}

/// The iterative algorithm with its full trace.
pub fn sing(data: &SampleMatrix, cfg: &SingConfig) -> Result<SingReport> {
    check_input(data, cfg)?;
    let (std_data, standardization) = standardize(data)?;
    let d = data.d();
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut ordering = Ordering::identity(d);
    let mut pattern = SparsityPattern::dense(d);
    let (final_edges, stopped_reason) = loop {
        let rec = run_iteration(&std_data, ordering, pattern, cfg)?;
        log::info!("iteration {}: {} edges", iterations.len() + 1, rec.edge_count);
        if let Some(prev) = iterations.last() {
            if rec.edge_count >= prev.edge_count {
                let keep = if rec.edge_count > prev.edge_count { prev.edges.clone() } else { rec.edges.clone() };
                iterations.push(rec);
                break (keep, StopReason::EdgeCountNonDecreasing);
            }
        }
        let edges = rec.edges.clone();
        iterations.push(rec);
        if edges.num_edges() == 0 {
            // An empty graph cannot shrink further.
            break (edges, StopReason::EdgeCountNonDecreasing);
        }
        if iterations.len() >= cfg.max_iterations {
            break (edges, StopReason::MaxIterations);
        }
        ordering = reverse_cholesky_ordering(&edges);
        pattern = sparsity_bound(&relabel(&edges, &ordering)?);
    };
    Ok(SingReport { config: *cfg, standardization, iterations, final_edges, stopped_reason })
}
