use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numeric range error: {0}")]
    Range(String),

    #[error("inner solve failed after {iterations} iterations (residual {residual:.3e})")]
    InnerSolve {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid parameter vector: {0}")]
    InvalidVector(String),

    #[error("rank deficient matrix; null directions (parameter indices): {null_directions:?}")]
    RankDeficient { null_directions: Vec<Vec<usize>> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_layer(self, layer: usize) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer {
                layer,
                source: Box::new(e),
            },
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::InnerSolve { .. }
            | Error::Range(_)
            | Error::RankDeficient { .. }
            | Error::Singular(_) => true,
            Error::Layer { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
