use thiserror::Error;

/// Errors raised by the solver, the Monte Carlo engine and the config loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("field `{field}` evaluated to a non-finite value at x={x}, t={t}{}", alpha_suffix(*.alpha))]
    Evaluation {
        field: &'static str,
        x: f64,
        t: f64,
        alpha: Option<f64>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("singular tridiagonal system at time level {level} (row {row})")]
    Singular { level: usize, row: usize },

    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("iteration diverged: diff grew over {window} consecutive steps, last q estimate {q_estimate}")]
    Divergence { window: usize, q_estimate: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn alpha_suffix(alpha: Option<f64>) -> String {
    match alpha {
        Some(a) => format!(", alpha={a}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
