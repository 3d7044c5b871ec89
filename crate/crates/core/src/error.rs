use thiserror::Error;

/// Errors raised by game evaluation, solvers, designers and simulators.
#[derive(Debug, Clone, Error)]
pub enum GameError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("numerical failure: {0}")]
    Numerics(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
    #[error("state diverged at t = {t}: |x| = {norm:e}")]
    Divergence { t: f64, norm: f64 },
    #[error("controller design failed: {0}")]
    Design(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GameError>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(GameError::Dimension {
            what,
            expected,
            got,
        })
    }
}
