use std::path::PathBuf;
use std::process::ExitCode;

use decaylab::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} point(s) failed; partial output written", .0)]
    PartialFailure(usize),
}

impl CliError {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config { path: path.into(), msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 config error, 3 numerical failure, 4 I/O error.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::PartialFailure(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Io(_) | CoreError::Parse { .. } => 4,
                CoreError::Json(_)
                | CoreError::NonNormalizable { .. }
                | CoreError::NotNormalized
                | CoreError::InvalidArgument(_)
                | CoreError::InvalidParams(_)
                | CoreError::LengthMismatch { .. }
                | CoreError::Domain(_) => 2,
                _ => 3,
            },
        })
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    fn code(e: CliError) -> ExitCode {
        e.exit_code()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(code(CliError::config("k", "m")), ExitCode::from(2));
        assert_eq!(code(CliError::PartialFailure(1)), ExitCode::from(3));
        assert_eq!(code(CliError::io("p", std::io::Error::other("x"))), ExitCode::from(4));
        let parse = CoreError::Parse { line: 3, column: 1, msg: "bad".into() };
        assert_eq!(code(parse.into()), ExitCode::from(4));
        assert_eq!(code(CoreError::InvalidParams("x".into()).into()), ExitCode::from(2));
        assert_eq!(code(CoreError::NoCrossing { horizon: 1.0 }.into()), ExitCode::from(3));
    }
}
