//! Crate-wide error type.

/// Alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The line list does not describe a tree rooted at the slack bus.
    #[error("network topology: {0}")]
    Topology(String),

    /// Vector or matrix sizes disagree with the declared bus count or
    /// slot count.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A charging requirement cannot be met inside the feasible set.
    #[error("infeasible charging requirement: {0}")]
    Infeasible(String),

    /// A scenario document failed validation. `path` names the
    /// offending field with JSON-pointer style dots.
    #[error("invalid scenario at `{path}`: {reason}")]
    Scenario { path: String, reason: String },

    /// An obfuscation key is unusable (zero mu, negative variance,
    /// empty sets).
    #[error("invalid obfuscation key: {0}")]
    Key(String),

    /// A non-finite value surfaced mid-run; the iteration aborts with
    /// context instead of propagating NaN into the output tables.
    #[error("numeric failure at iteration {iteration}: {what}")]
    Numeric { iteration: u64, what: String },

    /// The centralized reference solver hit its iteration cap.
    #[error(
        "reference solver did not converge within {iterations} iterations \
         (primal residual {primal_residual:.3e} kW, \
         worst voltage violation {constraint_violation:.3e} p.u.^2)"
    )]
    OracleNonConvergence {
        iterations: u64,
        primal_residual: f64,
        constraint_violation: f64,
    },

    /// Transcript and ground truth do not belong to the same run, or a
    /// recorded artifact is internally inconsistent.
    #[error("audit input mismatch: {0}")]
    AuditMismatch(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
