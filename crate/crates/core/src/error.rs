use std::path::PathBuf;

use crate::trial_data::{Arm, StratumLabel};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("subject {subject_id}: adherence indicator i{period} is missing while the subject is at risk")]
    MissingAdherence { subject_id: String, period: usize },

    #[error("design matrix is rank deficient")]
    SingularDesign,

    #[error("{n} rows cannot identify {q} coefficients with a residual variance")]
    InsufficientData { n: usize, q: usize },

    #[error("binary response has a single class")]
    Separation,

    #[error("logistic fit did not converge")]
    NotConverged,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("arm {arm}, step {step}: {source}")]
    Step {
        arm: Arm,
        step: String,
        #[source]
        source: Box<Error>,
    },

    #[error("empty stratum {stratum} in imputation {m} (subset {subset})")]
    EmptyStratum {
        m: usize,
        stratum: StratumLabel,
        subset: String,
    },

    #[error("{0}")]
    Inference(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
