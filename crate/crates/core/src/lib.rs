//! Unsupervised anomaly detection that couples dictionary learning with a
//! one-class SVM.
//!
//! The library trains four model families by alternating minimization over a
//! shared objective: a sparse-representation term (synthesis dictionary,
//! analysis/synthesis pair, or their kernel counterparts) plus the Lagrangian
//! of a linear one-class SVM fit on the sparse codes. Detection encodes new
//! samples against the learned dictionary, trims unreliable rows, and flags a
//! sample as anomalous when its SVM decision value is non-positive.
//!
//! Modules mirror the pipeline: [`numerics`] (dense linear algebra kernels),
//! [`kernelgram`] (Gram matrix assembly), [`sparse`] (OMP encoders),
//! [`ocsvm`] (the one-class SVM dual solver), [`atomupdate`] (per-atom
//! dictionary updates), [`models`] (training/detection drivers), [`dataio`]
//! (CSV and model persistence) and [`eval`] (metrics, grid search, k-fold,
//! contamination sweeps).

pub mod atomupdate;
pub mod dataio;
pub mod eval;
pub mod kernelgram;
pub mod models;
pub mod numerics;
pub mod ocsvm;
pub mod sparse;

pub use dataio::{load_csv, load_model, save_model, standardize, Dataset, Standardizer};
pub use eval::{balanced_accuracy, contamination_sweep, grid_search, kfold_eval, EvalReport, GridSpec};
pub use kernelgram::{cross_gram, gram, GramPack, KernelSpec};
pub use models::{
    detect, detect_with, train, DetectOptions, Detection, Hyperparams, TracePoint, TrainedModel,
    TrimRule, Variant,
};
pub use ocsvm::{OcsvmConfig, OcsvmModel, Prediction};
pub use sparse::SparseCodes;

use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to print a one-line
/// diagnostic at the CLI without a backtrace.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric within relative tolerance {tol:e}")]
    NotSymmetric { tol: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below -{floor:e})")]
    NotPsd { eigenvalue: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}:{row}: column {col}: {msg}")]
    Csv {
        path: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    DataFormat { path: String, msg: String },

    #[error("one-class svm dual infeasible: nu * N = {nu_n} < 1; raise nu_frac or add samples")]
    NuInfeasible { nu_n: f64 },

    #[error("labels contain a single class; balanced accuracy is undefined")]
    SingleClass,

    #[error("model file version {found} is not supported (this build reads version {supported})")]
    ModelVersion { found: u32, supported: u32 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

