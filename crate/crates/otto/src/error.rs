//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by geometry construction, solvers and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OttoError {
    /// Four points and weights whose conflict test cannot be decided,
    /// even with the symbolic perturbation.
    #[error("unresolvable degeneracy: {0}")]
    UnresolvableDegeneracy(String),
    /// The domain polygon is rejected (too few vertices, not convex, not simple).
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    /// A seed configuration violates a precondition (duplicate seed, seed outside D, bad sizes).
    #[error("invalid seeds: {0}")]
    InvalidSeeds(String),
    /// A vertex of the diagram does not fit any generic vertex class.
    #[error("degenerate vertex: {0}")]
    DegenerateVertex(String),
    /// A mesh element is too small or flat for the local projections.
    #[error("degenerate element: {0}")]
    DegenerateElement(String),
    /// A boundary condition refers to a label carried by no mesh edge.
    #[error("unlabeled required boundary: {0}")]
    UnlabeledBoundary(String),
    /// A cell is empty, so the weight Hessian does not exist.
    #[error("Hessian undefined: cell {0} is empty")]
    HessianUndefined(usize),
    /// The Newton line search exhausted its halvings.
    #[error("KMT stall: no admissible step after {0} halvings")]
    KmtStall(usize),
    /// Newton hit its iteration cap.
    #[error("no convergence after {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    /// A linear solve failed (singular pivot, CG breakdown).
    #[error("linear solver failure: {0}")]
    Solver(String),
    /// The elasticity problem has no Dirichlet support.
    #[error("empty anchor set: {0}")]
    EmptyAnchorSet(String),
    /// The constraint gradients are linearly dependent.
    #[error("dependent constraints: {0}")]
    DependentConstraints(String),
    /// An optimization iteration failed.
    #[error("iteration {iter}: {source}")]
    Iteration { iter: usize, source: Box<OttoError> },
    /// Any other invalid argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, OttoError>;
