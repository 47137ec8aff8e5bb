use std::fmt;

/// Which half of a round-trip translation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Forward,
    Backward,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Forward => f.write_str("forward"),
            Stage::Backward => f.write_str("backward"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value in {op}")]
    Numeric { op: &'static str },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("document of {len} positions exceeds the maximum of {max}")]
    Chunk { len: usize, max: usize },
    #[error("{stage} translation failed: {source}")]
    Decode {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn at_stage(self, stage: Stage) -> Self {
        Error::Decode {
            stage,
            source: Box::new(self),
        }
    }
}
