//! Module-level tolerance defaults.

/// First-order optimality residual accepted from closed-form projections.
pub const OPTIMALITY: f64 = 1e-9;

/// Slack allowed when checking set membership.
pub const DOMAIN: f64 = 1e-12;

/// Slack used when checking iterates handed to oracles.
pub const ORACLE_DOMAIN: f64 = 1e-9;

/// Floor applied to entropy iterates before taking logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Default accuracy of certified inner solves in gap evaluation.
pub const INNER_TOL: f64 = 1e-10;

/// Strict-feasibility margin required of a Slater witness.
pub const SLATER_MARGIN: f64 = 1e-12;

/// Default cap on sub-solver iteration budgets.
pub const BUDGET_CAP: u64 = 10_000_000;
