use std::fmt;

use knobs_core::Error;

/// A failure reported to the user: a stable code, an exit status and a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: &'static str,
    pub exit: i32,
    pub message: String,
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_INPUT: i32 = 3;
pub const EXIT_DIMENSION: i32 = 4;
pub const EXIT_TRAINING: i32 = 5;
pub const EXIT_INVALID_INPUT: i32 = 6;
pub const EXIT_STARTUP: i32 = 7;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: "usage",
            exit: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn unknown_flag(flag: &str) -> Self {
        Self {
            code: "unknown_flag",
            exit: EXIT_USAGE,
            message: format!("unknown flag --{flag}"),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: "config",
            exit: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self {
            code: "error",
            exit: EXIT_OTHER,
            message: message.into(),
        }
    }

    /// The service could not start, e.g. the port is taken.
    pub fn startup(message: impl Into<String>) -> Self {
        Self {
            code: "startup_failed",
            exit: EXIT_STARTUP,
            message: message.into(),
        }
    }

    /// `{"error":{"code":..,"message":..}}`
    pub fn to_json(&self) -> String {
        serde_json::json!({"error": {"code": self.code, "message": self.message}}).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, exit) = match &e {
            Error::Config(_) => ("config", EXIT_USAGE),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ("missing_input", EXIT_MISSING_INPUT)
            }
            Error::Io { .. } => ("io", EXIT_OTHER),
            Error::Dimension(_) => ("dimension_mismatch", EXIT_DIMENSION),
            Error::Training { .. } => ("training_failed", EXIT_TRAINING),
            Error::Parse { .. } | Error::Json(_) | Error::Container(_) => ("invalid_input", EXIT_INVALID_INPUT),
            Error::EmptyCorpus(_) | Error::EmptyTagTable { .. } => ("empty_input", EXIT_INVALID_INPUT),
            Error::DegenerateProfile => ("degenerate_profile", EXIT_INVALID_INPUT),
            Error::NoSegment => ("no_segment", EXIT_INVALID_INPUT),
            Error::DirectiveWithoutSae => ("directive_without_sae", EXIT_USAGE),
        };
        Self {
            code,
            exit,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
