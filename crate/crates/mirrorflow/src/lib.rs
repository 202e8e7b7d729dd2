//! Numerical toolkit for gradient flow under reparametrizations.
//!
//! Training a model `w = G(x)` by gradient flow on `x` induces nontrivial
//! dynamics on `w`. When the coordinate gradient fields of `G` commute, those
//! dynamics are a mirror flow for a Legendre function `R` built from `G` and
//! the initialization, and the usual implicit-bias consequences follow
//! (Bregman projection onto the interpolation set for underdetermined linear
//! regression). This crate provides:
//!
//! - derivative and flow primitives (Jacobians, Hessian-vector products, Lie
//!   brackets, descent flows) in [`geometry`],
//! - concrete parametrization families and the composed flow map `psi` in
//!   [`param`],
//! - commutation tests, the nested-bracket necessary condition, and the
//!   commutator-loop experiment in [`commutation`],
//! - Legendre functions, numeric convex conjugation, and Bregman divergences
//!   in [`legendre`],
//! - trajectory integration for reparametrized gradient flow, mirror flow,
//!   and Riemannian gradient flow, with equivalence checks, in [`flows`],
//! - underdetermined linear-regression experiments with an independent KKT
//!   oracle in [`bias`],
//! - a config-driven experiment runner in [`config`] and [`runner`] backing
//!   the `mirrorflow` CLI.

pub mod bias;
pub mod commutation;
pub mod config;
pub mod flows;
pub mod geometry;
pub mod legendre;
pub mod ode;
pub mod param;
pub mod runner;

use thiserror::Error;

/// Errors surfaced by the library.
///
/// Blow-up is a domain-boundary event (the flow reached the escape threshold
/// in finite time), not an internal failure; it carries the escape-time
/// estimate so callers can report which boundary was hit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point outside the domain of {name}: {detail}")]
    DomainViolation { name: String, detail: String },
    #[error("state norm exceeded the blow-up threshold at t = {t_escape:.6e}")]
    BlowUp { t_escape: f64 },
    #[error("integrator exhausted {max_steps} steps before reaching the target time")]
    StepExhausted { max_steps: usize },
    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e}); the query point is outside the range of the dual gradient")]
    NewtonNonConvergence { iters: usize, residual: f64 },
    #[error("parametrization is not regular at the given point (rank {rank} < d = {d}, sigma_min = {sigma_min:.3e})")]
    NotRegular { rank: usize, d: usize, sigma_min: f64 },
    #[error("flow leg along coordinate {axis} escaped in direction {direction} at |mu| = {t_escape:.6e}")]
    PsiBlowUp { axis: usize, direction: i8, t_escape: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
