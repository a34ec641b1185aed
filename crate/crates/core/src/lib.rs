//! Inexact primal-dual smoothing (IPDS) for convex-concave saddle point
//! problems `min_x max_λ f(x) + g(x) + Φ(x,λ) − h(λ)` with strongly convex `f`
//! and a possibly non-bilinear finite-sum coupling `Φ`.

pub mod cli;
pub mod constrained;
pub mod gap;
pub mod geometry;
pub mod ipds;
pub mod linalg;
pub mod problem;
pub mod subsolver;
pub mod tol;
pub mod zoo;
