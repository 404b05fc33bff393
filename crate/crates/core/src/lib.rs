//! Markov structure learning for continuous, non-Gaussian distributions.
//!
//! The pipeline fits a monotone lower-triangular transport map to samples by
//! maximum likelihood, turns the fitted pullback density into a matrix of
//! integrated squared mixed log-density derivatives (the conditional
//! independence score), thresholds that matrix with delta-method variances,
//! and then iterates: the estimated graph predicts which map entries vanish,
//! the sparser map is refitted, and the score is recomputed.
//!
//! The crate is `no_std` (it needs `alloc`). The `std` feature turns on
//! rayon-backed parallel loops for per-component fits and per-component
//! score gradients; results are merged by index so output is unchanged.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`numerics`] | dense matrices, Cholesky, Gauss quadrature, finite differences |
//! | [`basis`] | total-degree multi-index sets, Hermite-function evaluation |
//! | [`transport`] | map components, pullback log-density and its derivatives, inversion |
//! | [`optimize`] | per-component BFGS fits, affine closed form, Fisher information |
//! | [`score`] | score estimator, delta-method variances, thresholding |
//! | [`graph`] | undirected graphs, elimination sparsity bound, orderings |
//! | [`sing`] | the non-iterative and iterative drivers |
//! | [`datasets`] | seeded generators for the benchmark families |
//! | [`oracle`] | Gaussian scores, nested Monte Carlo CMI, log-Sobolev bound |

#![cfg_attr(not(any(test, feature = "std")), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod basis;
pub mod datasets;
pub mod graph;
pub mod numerics;
pub mod optimize;
pub mod oracle;
mod par;
pub mod score;
pub mod sing;
pub mod transport;

pub use datasets::{DatasetFamily, DatasetSpec, RngStream, SampleMatrix};
pub use graph::{Ordering, UndirectedGraph};
pub use numerics::Matrix;
pub use score::{ScoreMatrix, ThresholdedScore};
pub use sing::{n_sing, sing, SingConfig, SingReport};
pub use transport::{SparsityPattern, TriangularMap};

use alloc::boxed::Box;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} is {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric to tolerance (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("derivative order {0} is not supported (maximum is 2)")]
    UnsupportedDerivativeOrder(u8),

    #[error("root bracket could not be expanded for component {component}")]
    NoConvergence { component: usize },

    #[error("column {column} has (near) zero empirical standard deviation")]
    DegenerateColumn { column: usize },

    #[error("state magnitude exceeded the blow-up bound at step {step}")]
    NumericalBlowup { step: usize },

    #[error("not enough data: need at least {needed}, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("fitting map component {component} failed: {source}")]
    ComponentFit { component: usize, source: Box<Error> },
}

pub type Result<T> = core::result::Result<T, Error>;
