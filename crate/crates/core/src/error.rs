use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("point-mass distribution has no nontrivial bound (set allow_point_mass to override)")]
    PointMass,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("point-mass verifier has no nontrivial bound (mu = {0})")]
    ZeroEntropy(f64),

    #[error("family is arithmetic; renewal-limit identities do not apply: {0}")]
    Arithmetic(String),

    #[error("family `{0}` is not paired; q-greedy drafting needs drafter distributions")]
    NotPaired(String),

    #[error("expansion limit of {limit} reached after {reached} nodes")]
    Truncated { limit: u64, reached: u64 },

    #[error("trace {path}: {message}")]
    Trace { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
