use std::io;
use std::path::PathBuf;

use depkit_core::baselines::BaselineError;
use depkit_core::corpus::CorpusError;
use depkit_core::encoder::EncoderError;
use depkit_core::ensemble::EnsembleError;
use depkit_core::experiment::ExperimentError;
use depkit_core::metrics::MetricsError;
use depkit_core::probs::ProbsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: line {line}: {reason}", path.display())]
    MalformedRow { path: PathBuf, line: usize, reason: String },
    #[error("{}: line {line}: label {label:?} is not a level of schema {schema}", path.display())]
    UnknownLabel { path: PathBuf, line: usize, label: String, schema: String },
    #[error("{}: no data rows", .0.display())]
    EmptyDataset(PathBuf),
    #[error("dataset {0:?} is not defined in the config")]
    DatasetNotFound(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("training failed: {0}")]
    Train(String),
    #[error("ensemble member {member:?} has no cached run for seed {seed}; run `finetune` for it first")]
    MissingMemberRun { member: String, seed: u64 },
    #[error("encoder {0:?} is not available: no local checkpoint (use --toy for toy encoders)")]
    EncoderUnavailable(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Exit-status families of the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Train,
    MissingArtifact,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Io => 1,
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Train => 4,
            ErrorKind::MissingArtifact => 5,
        }
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::MalformedRow { .. }
            | Error::UnknownLabel { .. }
            | Error::EmptyDataset(_)
            | Error::DatasetNotFound(_)
            | Error::SchemaMismatch(_)
            | Error::Data(_)
            | Error::Format { .. } => ErrorKind::Data,
            Error::Train(_) => ErrorKind::Train,
            Error::MissingMemberRun { .. } | Error::EncoderUnavailable(_) | Error::MissingArtifact(_) => ErrorKind::MissingArtifact,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

impl From<CorpusError> for Error {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::SchemaMismatch(m) => Error::SchemaMismatch(m),
            CorpusError::NonSurjective(level) => Error::SchemaMismatch(format!("mapping leaves target level {level} without a source")),
            CorpusError::InvalidSchema(_) | CorpusError::MappingSyntax { .. } => Error::Config(e.to_string()),
            other => Error::Data(other.to_string()),
        }
    }
}

impl From<EncoderError> for Error {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::EncoderUnavailable(name) => Error::EncoderUnavailable(name),
            EncoderError::SchemaMismatch { .. } => Error::SchemaMismatch(e.to_string()),
            EncoderError::InvalidHyperParams(m) => Error::Config(m),
            EncoderError::EmptyText | EncoderError::EmptyInput => Error::Data(e.to_string()),
            EncoderError::DivergedLoss { .. } | EncoderError::InvalidWeights(_) => Error::Train(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Error {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::EmptySpace => Error::Config(e.to_string()),
            ExperimentError::SchemaMismatch(m) => Error::SchemaMismatch(m),
            ExperimentError::Encoder(e) => e.into(),
            ExperimentError::Metrics(e) => e.into(),
            ExperimentError::Corpus(e) => e.into(),
        }
    }
}

impl From<EnsembleError> for Error {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::ShapeMismatch { .. } | EnsembleError::IdOrderMismatch { .. } | EnsembleError::NoMembers => Error::Data(e.to_string()),
            _ => Error::Config(e.to_string()),
        }
    }
}

impl From<BaselineError> for Error {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::UnknownKind(_) => Error::Config(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for Error {
    fn from(e: MetricsError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<ProbsError> for Error {
    fn from(e: ProbsError) -> Self {
        Error::Data(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
