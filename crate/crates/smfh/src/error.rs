//! Error type shared by all modules.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("negative feature in {file} at row {row}, column {col}: {value}")]
    NegativeFeature {
        file: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("non-finite feature in {file} at row {row}, column {col}")]
    NonFiniteFeature {
        file: String,
        row: usize,
        col: usize,
    },

    #[error("non-binary label in {file} at row {row}, column {col}: {value}")]
    NonBinaryLabel {
        file: String,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error("unlabeled sample at index {index}")]
    UnlabeledSample { index: usize },

    #[error("dataset must have at least two modalities, found {found}")]
    TooFewModalities { found: usize },

    #[error("modality weights must sum to 1 (got {sum})")]
    WeightSum { sum: f64 },

    #[error("invalid hyperparameter {name}: {msg}")]
    InvalidHyper { name: &'static str, msg: String },

    #[error("sample size {m} exceeds population {n}")]
    SampleTooLarge { m: usize, n: usize },

    #[error("sample set is empty")]
    EmptySample,

    #[error("affinity matrix is not symmetric at ({i}, {j})")]
    AsymmetricAffinity { i: usize, j: usize },

    #[error("linear system is singular; set gamma > 0")]
    SingularSystem,

    #[error("linear system is ill-conditioned: condition estimate {cond:.3e} exceeds 1e12")]
    IllConditioned { cond: f64 },

    #[error("objective diverged to a non-finite value at iteration {iter}")]
    Diverged { iter: usize },

    #[error("code length mismatch: {a} vs {b} bits")]
    BitWidthMismatch { a: usize, b: usize },

    #[error("k = {k} exceeds database size {n}")]
    KTooLarge { k: usize, n: usize },

    #[error("query has no relevant items")]
    NoRelevantItems,

    #[error("no queries with relevant items to average over")]
    NoValidQueries,

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/validation errors, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::SingularSystem
            | Error::IllConditioned { .. }
            | Error::Diverged { .. } => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
