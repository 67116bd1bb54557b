//! Failure classes and their exit codes.

use std::fmt;

/// Exit code for command-line usage errors (clap uses the same value).
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_COMPUTE: u8 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Maps an error chain to an exit code: explicit failures first, then file
/// problems, then configuration errors reported by the library.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use radar_uq::Error;
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io(_) | Error::Format(_) => EXIT_IO,
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_COMPUTE,
            };
        }
    }
    EXIT_COMPUTE
}
