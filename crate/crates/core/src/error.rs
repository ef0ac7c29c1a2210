use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` names the offending key.
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    /// An update produced a non-finite value; the run cannot continue.
    #[error("divergent update at seq {seq}: {detail}")]
    Divergence { seq: u64, detail: String },

    /// The event stream violates ordering or causality.
    #[error("invalid stream at seq {seq}: {reason}")]
    Stream { seq: u64, reason: String },

    #[error("cosine distance undefined for a zero-norm vector")]
    ZeroNorm,

    #[error("norm ratio undefined: item {item} has a zero-norm initial embedding")]
    ZeroInitialNorm { item: u32 },

    #[error("item {item} has no snapshot at {views} views")]
    MissingSnapshot { item: u32, views: u64 },

    #[error("empty event log")]
    EmptyLog,

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: u32 },

    #[error("{source_name}: line {line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },

    #[error("{source_name}: schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion {
        source_name: String,
        expected: String,
        found: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 runtime abort, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Divergence { .. }
            | Error::Stream { .. }
            | Error::ZeroNorm
            | Error::ZeroInitialNorm { .. }
            | Error::MissingSnapshot { .. }
            | Error::EmptyLog
            | Error::UnknownId { .. } => 2,
            Error::Parse { .. } | Error::SchemaVersion { .. } | Error::Io { .. } => 3,
        }
    }
}
