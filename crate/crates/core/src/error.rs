use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("matrix is singular")]
    Singular,

    #[error("riccati recursion did not converge in {iterations} iterations (last change {residual:e})")]
    RiccatiNotConverged { iterations: usize, residual: f64 },

    #[error("pretraining diverged at step {step}: grid mse {mse} vs initial {initial_mse}")]
    PretrainDiverged {
        step: usize,
        mse: f64,
        initial_mse: f64,
    },

    #[error("degenerate Lyapunov candidate: V spans only [{min}, {max}] over the grid")]
    DegenerateCandidate { min: f64, max: f64 },

    #[error("non-finite {what} at sgd step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("grids differ ({left_cells} vs {right_cells} cells)")]
    GridMismatch {
        left_cells: usize,
        right_cells: usize,
    },

    #[error("sublevel set of level {level} touches the domain boundary")]
    LevelSetTouchesBoundary { level: f64 },
}
