use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] enteroseg_core::Error),
    #[error(transparent)]
    Imaging(#[from] enteroseg_imaging::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error("missing artifact `{artifact}`; {hint}")]
    Missing { artifact: String, hint: String },
    #[error("stale artifact `{artifact}` was built from a different config; {hint}")]
    Stale { artifact: String, hint: String },
    #[error("{0}")]
    Invalid(String),
    #[error("leakage: {0}")]
    Leakage(String),
}

impl Error {
    /// Short machine-readable category for the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Core(_) => "core",
            Error::Imaging(_) => "imaging",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
            Error::Missing { .. } => "missing_artifact",
            Error::Stale { .. } => "stale_artifact",
            Error::Invalid(_) => "invalid",
            Error::Leakage(_) => "leakage",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.to_string();
    move |source| Error::Io { context, source }
}

pub fn json_err(e: serde_json::Error) -> Error {
    Error::Invalid(format!("json: {e}"))
}
