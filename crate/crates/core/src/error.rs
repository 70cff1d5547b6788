use thiserror::Error;

pub type Result<T> = std::result::Result<T, MagrayError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagrayError {
    /// An input outside the operation's domain (zero covector, non-unit vector, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("unsupported for {kind} fields: {op}")]
    Unsupported { op: &'static str, kind: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    /// The integrator produced a non-finite state; `t` is the last time with a finite state.
    #[error("integration failed after t = {t}")]
    Integration { t: f64 },

    #[error("fiber band limit exceeded: dropped mass {dropped:.3e} vs norm {norm:.3e}")]
    Truncation { dropped: f64, norm: f64 },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { solver: &'static str, iterations: usize, residual: f64 },

    #[error("orbit search failed: {reason} (best defect {best_defect:.3e})")]
    Search { reason: String, best_defect: f64 },

    #[error("dense assembly of dimension {dim} exceeds the limit {limit}")]
    TooLarge { dim: usize, limit: usize },
}

impl MagrayError {
    pub fn is_nonconvergence(&self) -> bool {
        matches!(self, Self::NonConvergence { .. } | Self::Search { .. })
    }
}
