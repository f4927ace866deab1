use thiserror::Error;

/// Errors produced by the solvers and their parameter validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("incident channel closed: incident energy {energy} does not exceed excitation {threshold}")]
    BelowThreshold { energy: f64, threshold: f64 },

    #[error("incident energy {energy} within {tolerance} (relative) of the threshold {threshold} of level {level}")]
    AtThreshold {
        level: usize,
        energy: f64,
        threshold: f64,
        tolerance: f64,
    },

    #[error("could not move channel poles off the bin edges after {attempts} grid adjustments")]
    PoleOnEdge { attempts: usize },

    #[error("singular linear system (pivot magnitude {pivot:.3e}, condition estimate {condition:.3e})")]
    Singular { pivot: f64, condition: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("not converged: {what} (achieved {achieved:.3e}, required {required:.3e})")]
    NotConverged {
        what: &'static str,
        achieved: f64,
        required: f64,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. } | Error::Integration(_) | Error::NotConverged { .. } | Error::PoleOnEdge { .. }
        )
    }

    /// Points outside the physical domain of a solver, as opposed to failures.
    pub fn is_threshold_exclusion(&self) -> bool {
        matches!(self, Error::AtThreshold { .. } | Error::BelowThreshold { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
