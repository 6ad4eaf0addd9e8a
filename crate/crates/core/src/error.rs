use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Debug, Error)]
pub enum HomlabError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid preset parameters: {0}")]
    InvalidPreset(String),

    #[error("coefficient validation failed: {0}")]
    CoefficientInvalid(String),

    #[error("cell solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    CellNoConvergence { residual: f64, iterations: usize },

    #[error("nonzero-mean right-hand side for torus Poisson problem (component {component}, mean {mean:.3e})")]
    NonzeroMean { component: usize, mean: f64 },

    #[error("linear solver stagnated: residual {residual:.3e} after {iterations} iterations")]
    SolverStagnation { residual: f64, iterations: usize },

    #[error("coercivity not certified: lambda {lambda} below the estimate lambda0 {lambda0}")]
    CoercivityFailure { lambda: f64, lambda0: f64 },

    #[error("under-resolved: {0}")]
    UnderResolved(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("compatibility defect {0:.3e} in discretized Neumann data")]
    CompatibilityDefect(f64),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HomlabError>;
