use std::fmt;

use thiserror::Error;

/// Pipeline stage that produced an error during model fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    LocalFit,
    Alignment,
    GpTraining,
    WeightOptimization,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::LocalFit => "local mixture fit",
            Stage::Alignment => "component alignment",
            Stage::GpTraining => "GP training",
            Stage::WeightOptimization => "weight optimization",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("no records")]
    NoRecords,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate support: all samples identical")]
    DegenerateSupport,

    #[error("too few samples for K components at input '{input_id}': {samples} < {components}")]
    TooFewSamples {
        input_id: String,
        samples: usize,
        components: usize,
    },

    #[error("kernel matrix not PD")]
    NotPositiveDefinite,

    #[error("matrix square root failed: {0}")]
    MatrixSqrt(String),

    #[error("assignment budget exceeded: {terms} terms > {budget}")]
    BudgetExceeded { terms: f64, budget: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model schema error: {0}")]
    Schema(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(stage: Stage) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
