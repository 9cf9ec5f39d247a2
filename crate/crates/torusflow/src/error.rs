use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metric positivity lost: min density {min:.6e} below floor {floor:.1e}")]
    PositivityLoss { min: f64, floor: f64 },

    #[error("field contains non-finite values")]
    NonFinite,

    #[error("mismatched grids or shapes")]
    ShapeMismatch,

    #[error("{0}")]
    Domain(String),

    #[error("numerical blowup at t = {t:.6}")]
    Blowup { t: f64 },

    #[error("linear solve residual {achieved:.3e} exceeds tolerance {required:.3e}")]
    ResidualTooLarge { achieved: f64, required: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("fixed-point iteration did not converge in {iters} iterations")]
    MaxItersExceeded {
        iters: usize,
        report: Box<crate::contraction::IterationReport>,
    },

    #[error("iteration stopped contracting at step {iter}: ratio {ratio:.3}")]
    NonContractive {
        iter: usize,
        ratio: f64,
        report: Box<crate::contraction::IterationReport>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
