//! Crate-wide error type.
//!
//! Variants are grouped by failure domain so callers (the CLI in particular)
//! can map them to exit classes: configuration problems, gateway problems,
//! and analysis problems are distinguishable without string matching.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration input: unparseable file, missing referenced file,
    /// unloadable tokenizer vocabulary, and similar setup failures.
    #[error("configuration error: {0}")]
    Config(String),

    /// Config parsed but failed validation. Every violation is listed.
    #[error("invalid configuration:\n{}", format_violations(.0))]
    ConfigValidation(Vec<String>),

    /// Prompt template missing required placeholders or unreadable.
    #[error("template error: {0}")]
    Template(String),

    /// A chat request violated its own preconditions before hitting the wire.
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),

    /// Transport-level failure that survived every retry attempt.
    #[error("gateway transport failure after {attempts} attempt(s): {message}")]
    Gateway { attempts: u32, message: String },

    /// The endpoint answered, but not with a usable completion.
    #[error("gateway protocol error{}: {message}", status_suffix(.status))]
    Protocol { status: Option<u16>, message: String },

    /// Run plan rejected before any request was issued.
    #[error("run plan error: {0}")]
    Plan(String),

    /// Record store or dataset file problem; message carries line context.
    #[error("store error in {}: {message}", .path.display())]
    Store { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Domain errors from the analysis layer (bad inputs, preconditions).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// The regression design cannot identify the requested parameters.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Cost-constrained selection had no feasible point.
    #[error("no feasible budget under the cost cap; cheapest available point costs {cheapest}")]
    InfeasibleCost { cheapest: f64 },

    /// Thinking ratio is undefined when the input token count is zero.
    #[error("thinking ratio undefined: input token count is zero")]
    UndefinedRatio,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn store(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Store { path: path.into(), message: message.into() }
    }
}

fn format_violations(violations: &[String]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn status_suffix(status: &Option<u16>) -> String {
    match status {
        Some(code) => format!(" (http {code})"),
        None => String::new(),
    }
}
