use std::path::PathBuf;

/// Crate-wide error type. Variants follow the failure classes the pipeline
/// distinguishes (configuration, integrity, numerical, ...), so callers such
/// as the CLI can map them onto exit statuses.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to decode audio file {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("waveform too short: {samples} samples, need at least {required}")]
    TooShort { samples: usize, required: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("insufficient samples: {samples} rows for retained rank {rank}")]
    InsufficientSamples { samples: usize, rank: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("feature extraction failed for {} clip(s): {}", .0.len(), summarize(.0))]
    Extraction(Vec<(String, String)>),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

fn summarize(failures: &[(String, String)]) -> String {
    let mut parts: Vec<String> = failures
        .iter()
        .take(5)
        .map(|(id, msg)| format!("{id}: {msg}"))
        .collect();
    if failures.len() > 5 {
        parts.push(format!("... and {} more", failures.len() - 5));
    }
    parts.join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than a
    /// runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
