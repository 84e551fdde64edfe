use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or missing configuration (exit code 2).
    Config,
    /// Malformed, inconsistent, or missing data (exit code 3).
    Data,
    /// Numerical failure during fitting or training (exit code 4).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error for {subject}: {msg}")]
    Validation { subject: String, msg: String },

    #[error("duplicate user id {user_id}")]
    DuplicateUser { user_id: String },

    #[error("tweet {tweet_id} references unknown user {user_id}")]
    DanglingTweet { tweet_id: String, user_id: String },

    #[error("vocabulary too small: requested {requested} topics, corpus has {achievable} distinct tokens")]
    VocabularyTooSmall { requested: usize, achievable: usize },

    #[error("users without tweets cannot enter the frequency matrix: {}", user_ids.join(", "))]
    UsersWithoutTweets { user_ids: Vec<String> },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("row ids do not line up in {context}")]
    IdMismatch { context: String },

    #[error("unknown user id {user_id}")]
    UnknownUser { user_id: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact for stage `{stage}`: {path} (run `{hint}` first)")]
    MissingArtifact {
        stage: String,
        path: PathBuf,
        hint: String,
    },

    #[error("ELBO became non-finite at iteration {iteration}")]
    NonFiniteElbo { iteration: usize },

    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unknown report format `{0}` (expected csv or markdown)")]
    UnknownFormat(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(subject: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            subject: subject.into(),
            msg: msg.into(),
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::MissingArtifact { .. } | Error::UnknownFormat(_) => {
                ErrorKind::Config
            }
            Error::NonFiniteElbo { .. } | Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }
}
