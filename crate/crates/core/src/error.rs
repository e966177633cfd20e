use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph: {0}")]
    Graph(String),
    #[error("arrow groups: {0}")]
    Group(String),
    #[error("rate for {arrow}: {msg}")]
    Rate { arrow: String, msg: String },
    #[error("covariate '{name}' is not defined at t={t}")]
    CovariateRange { name: String, t: f64 },
    #[error("kernel: {0}")]
    Kernel(String),
    #[error("outflow {outflow} exceeds count {count} at vertex {vertex}")]
    Overflow { vertex: String, count: i64, outflow: i64 },
    #[error("invalid transition pattern: {0}")]
    Pattern(String),
    #[error("plan: {0}")]
    Plan(String),
    #[error("estimation: {0}")]
    Estimate(String),
    #[error("filtering failure at observation {index} (t={time}): all particle weights are zero")]
    FilterFailure { index: usize, time: f64 },
    #[error("parameters: {0}")]
    Param(String),
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Errors caused by malformed inputs rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Graph(_)
                | Error::Group(_)
                | Error::Plan(_)
                | Error::Param(_)
                | Error::Data(_)
                | Error::Config(_)
                | Error::Io { .. }
        )
    }
}
