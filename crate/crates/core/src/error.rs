//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    EmbeddingDim { expected: usize, got: usize },

    #[error("embedding norm {norm} departs from unit length beyond {tol}")]
    EmbeddingNorm { norm: f64, tol: f64 },

    #[error("matrix shape mismatch: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("degenerate box: w={w}, h={h} (both must be positive and finite)")]
    DegenerateBox { w: f64, h: f64 },

    #[error("frame {frame} does not advance past frame {last}")]
    FrameRegression { frame: u64, last: u64 },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate row for frame {frame}, id {id}")]
    DuplicateRow { frame: u64, id: u64 },

    #[error("rows not sorted by (frame, id): row for frame {frame}, id {id} is out of order")]
    UnsortedRows { frame: u64, id: u64 },

    #[error("ground truth is empty")]
    EmptyGroundTruth,

    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("conflicting scenario directives: {0}")]
    ScenarioConflict(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
