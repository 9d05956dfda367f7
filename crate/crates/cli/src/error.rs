use std::path::PathBuf;

use serde_json::json;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {field}: {detail}")]
    Config { field: String, detail: String },

    #[error("invariant violated: {detail}")]
    Invariant { detail: String, max_deviation: Option<f64>, location: Option<String> },

    #[error("training diverged (seed {seed}) at step {step}: loss {loss}")]
    Divergence { seed: u64, step: u64, loss: f32 },

    #[error("{context}: {source}")]
    Core { context: String, source: podscale::Error },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
}

impl CliError {
    pub fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Config { field: field.into(), detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Wraps a library error; divergence keeps its own exit code.
    pub fn core(context: impl Into<String>, seed: u64, source: podscale::Error) -> Self {
        match source {
            podscale::Error::Divergence { step, loss } => Self::Divergence { seed, step, loss },
            source => Self::Core { context: context.into(), source },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Invariant { .. } => 3,
            Self::Divergence { .. } => 4,
            Self::Core { .. } | Self::Io { .. } | Self::Csv { .. } => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Config { .. } => "config",
            Self::Invariant { .. } => "invariant",
            Self::Divergence { .. } => "divergence",
            Self::Core { .. } => "runtime",
            Self::Io { .. } | Self::Csv { .. } => "io",
        }
    }

    /// Single-line JSON error record for stderr.
    pub fn to_record(&self) -> serde_json::Value {
        let mut rec = json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            Self::Config { field, .. } => rec["field"] = json!(field),
            Self::Invariant { max_deviation, location, .. } => {
                rec["max_deviation"] = json!(max_deviation);
                rec["location"] = json!(location);
            }
            Self::Divergence { seed, step, loss } => {
                rec["seed"] = json!(seed);
                rec["step"] = json!(step);
                rec["loss"] = json!(loss.to_string());
            }
            _ => {}
        }
        rec
    }
}
