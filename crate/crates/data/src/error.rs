use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("video {video_id}: {message}")]
    Video { video_id: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn json_err(path: &std::path::Path) -> impl FnOnce(serde_json::Error) -> DataError + '_ {
    move |source| DataError::Json {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn video_err(video_id: &str, message: impl Into<String>) -> DataError {
    DataError::Video {
        video_id: video_id.to_string(),
        message: message.into(),
    }
}
