use thiserror::Error;

use crate::igmres::SolveReport;

pub type Result<T> = std::result::Result<T, DysonError>;

#[derive(Debug, Error)]
pub enum DysonError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("not enough states to hold {n_electrons} electrons ({n_states} states available)")]
    InsufficientStates { n_electrons: usize, n_states: usize },

    #[error("SCF not converged after {iterations} iterations (residual {residual:.3e})")]
    ScfNotConverged { iterations: usize, residual: f64 },

    #[error("Sternheimer CG not converged after {iterations} iterations (residual {residual:.3e}, tolerance {tolerance:.3e})")]
    SternheimerNotConverged {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("inexact GMRES not converged after {} iterations (estimated residual {:.3e})", .report.iterations.len(), .report.final_est_res)]
    GmresNotConverged { report: Box<SolveReport> },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DysonError {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            DysonError::ScfNotConverged { .. }
            | DysonError::SternheimerNotConverged { .. }
            | DysonError::GmresNotConverged { .. } => 2,
            DysonError::Invariant(_) => 3,
            DysonError::Io(_) | DysonError::Json(_) | DysonError::Csv(_) | DysonError::Archive(_) => 4,
            _ => 1,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DysonError::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
