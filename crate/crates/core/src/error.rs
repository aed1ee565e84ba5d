use std::path::PathBuf;

use crate::inventory::SenseKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage a backend failure originated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Saliency,
    HostSaliency,
    Infill,
    Judge,
    Encode,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Saliency => "saliency",
            Stage::HostSaliency => "host-saliency",
            Stage::Infill => "infill",
            Stage::Judge => "judge",
            Stage::Encode => "encode",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate sense key {0}")]
    DuplicateKey(SenseKey),
    #[error("unknown sense key {0}")]
    UnknownSense(SenseKey),
    #[error("instance {0} has no entry in the gold key file")]
    MissingGold(String),
    #[error("no MFS host sentence for {lemma}.{pos}")]
    NoHostAvailable { lemma: String, pos: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("gold sense {0} is not among the candidates")]
    LabelNotCandidate(SenseKey),
    #[error("span {start}..={end} out of range for sentence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("backend contract violation: {0}")]
    BackendContractViolation(String),
    #[error("{stage} backend: {msg}")]
    Backend { stage: Stage, msg: String },
    #[error("non-finite loss in stage {stage}, epoch {epoch}")]
    Divergence { stage: u8, epoch: usize },
    #[error("need at least {needed} points, got {got}; plot the raw coordinates directly instead")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Tag a backend error with the stage it surfaced in. Errors that are
    /// not backend failures pass through unchanged.
    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            Error::Backend { msg, .. } => Error::Backend { stage, msg },
            other => other,
        }
    }

    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Backend { .. } | Error::BackendContractViolation(_)
        )
    }
}
