use std::fmt;

use thiserror::Error;

/// One violated invariant of a [`crate::MetaParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum MetaViolation {
    /// Mixing weights do not sum to one, or some weight is not strictly positive.
    InvalidSimplex { sum: f64, min: f64 },
    NonPositiveNoise { component: usize, value: f64 },
    /// `max_i sqrt(s_i^2 + |w_i|^2)` exceeds one.
    ScaleExceedsOne { rho: f64 },
    ZeroSeparation { first: usize, second: usize },
}

impl fmt::Display for MetaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetaViolation::InvalidSimplex { sum, min } => {
                write!(f, "invalid-simplex (sum {sum}, min weight {min})")
            }
            MetaViolation::NonPositiveNoise { component, value } => {
                write!(f, "non-positive-noise (s[{component}] = {value})")
            }
            MetaViolation::ScaleExceedsOne { rho } => write!(f, "scale-exceeds-one (rho = {rho})"),
            MetaViolation::ZeroSeparation { first, second } => {
                write!(f, "zero-separation (w[{first}] == w[{second}])")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid meta-parameters: {}", list(.0))]
    InvalidMeta(Vec<MetaViolation>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few examples: need at least {needed}, got {got}")]
    TooFewExamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("basis columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error("cluster {0} has no usable examples")]
    EmptyCluster(usize),

    #[error("non-positive variance or weight for component {0}")]
    NonPositiveParameter(usize),

    #[error("missing ground-truth label for task {0}")]
    MissingLabel(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

fn list(v: &[MetaViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
