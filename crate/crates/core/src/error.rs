use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the working box of a cost model.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested operation needs something the model does not provide.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("unknown cost `{name}`; available costs: {}", available.join(", "))]
    UnknownCost {
        name: String,
        available: Vec<&'static str>,
    },

    /// Malformed or inconsistent input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Source and target masses differ.
    #[error(
        "infeasible problem: source mass {source_mass} differs from target mass {target_mass}"
    )]
    Infeasible { source_mass: f64, target_mass: f64 },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// No dual potentials certify the plan within tolerance.
    #[error("certification failure: worst dual violation {violation:e}")]
    CertificationFailure { violation: f64 },

    #[error(
        "degenerate mixed Hessian at {point}: sigma_min {sigma_min:e}, sigma_max {sigma_max:e}"
    )]
    DegenerateHessian {
        point: String,
        sigma_min: f64,
        sigma_max: f64,
    },

    /// Input too small or too degenerate for the requested check.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("no certificate: {0}")]
    NoCertificate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
