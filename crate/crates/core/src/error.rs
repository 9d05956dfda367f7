use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: empty batch")]
    EmptyBatch { op: &'static str },

    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("partition planning failed along {axis}: {detail}")]
    Plan { axis: &'static str, detail: String },

    #[error("{op}: non-finite value in {what}")]
    NonFinite { op: &'static str, what: &'static str },

    #[error("weight shard layout mismatch: {0}")]
    Layout(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f32 },

    #[error("parse error at {location}: {detail}")]
    Parse { location: String, detail: String },

    #[error("missing or inconsistent forward cache: {0}")]
    Cache(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}
