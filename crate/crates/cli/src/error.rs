use std::io;
use std::path::PathBuf;

use thiserror::Error;
use topictrend::analysis::AnalysisError;
use topictrend::features::FeatureError;
use topictrend::ingest::IngestError;
use topictrend::nmf::NmfError;
use topictrend::preprocess::PreprocessError;
use topictrend::stability::StabilityError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact for `{stage}`: run `topictrend {command}` first")]
    MissingArtifact { stage: String, command: String },
    #[error("stale artifact: {0}")]
    Stale(String),
    #[error("output directory {0} is locked by another run (delete .lock if no run is active)")]
    Locked(PathBuf),
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::MissingArtifact { .. } | Self::Stale(_) | Self::Locked(_) => 1,
            Self::Data(_) => 2,
            Self::Io { .. } | Self::Internal(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { path, source } => Self::Io { path, source },
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::Io { path, source } => Self::Io { path, source },
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Io(source) => Self::Io { path: PathBuf::new(), source },
            FeatureError::Format(msg) => Self::Stale(format!("unreadable feature artifact: {msg}")),
            FeatureError::Json(e) => Self::Stale(format!("unreadable feature artifact: {e}")),
            FeatureError::InvalidParameter(msg) => Self::Config(msg),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<NmfError> for CliError {
    fn from(e: NmfError) -> Self {
        match e {
            NmfError::Io(source) => Self::Io { path: PathBuf::new(), source },
            NmfError::Pool(msg) => Self::Internal(msg),
            NmfError::InvalidConfig(msg) => Self::Config(msg),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Pool(msg) => Self::Internal(msg),
            StabilityError::InvalidParameter(msg) => Self::Config(msg),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Io(source) => Self::Io { path: PathBuf::new(), source },
            AnalysisError::LabelCount { .. } | AnalysisError::InvalidLambda(_) => Self::Config(e.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Stale(format!("unreadable artifact: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Internal(format!("csv: {e}"))
    }
}
