use std::fmt;

use serde::Serialize;

/// A problem with the command line or the configuration (exit code 2).
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub type CliResult<T> = Result<T, Usage>;

pub fn usage(msg: impl Into<String>) -> Usage {
    Usage(msg.into())
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Machine-readable failure report, printed as one JSON line on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub exit_code: u8,
    pub message: String,
}

/// Exit code and kind of a failure. Bad input (config, files, shapes) is a
/// usage error; numerical blow-ups and everything else are runtime errors.
pub fn classify(err: &anyhow::Error) -> ErrorReport {
    use adrmx_core::Error as E;
    let (kind, exit_code) = if err.downcast_ref::<Usage>().is_some() {
        ("usage", EXIT_USAGE)
    } else if let Some(e) = err.downcast_ref::<E>() {
        match e {
            E::Config(_) | E::Dimension { .. } | E::Index { .. } => ("config", EXIT_USAGE),
            E::Format(_) | E::Length { .. } | E::Json(_) => ("format", EXIT_USAGE),
            E::Divergence(_) | E::NonFinite(_) => ("divergence", EXIT_RUNTIME),
            _ => ("runtime", EXIT_RUNTIME),
        }
    } else {
        ("runtime", EXIT_RUNTIME)
    };
    ErrorReport {
        kind,
        exit_code,
        message: format!("{err:#}"),
    }
}
