//! Library behind the `nsstat` command-line tool: configuration handling, subcommands
//! and built-in verification suites.

pub mod checks;
pub mod commands;
pub mod config;

use serde_json::{json, Value};

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Runtime(String),
    /// Exit code 2; every violation found.
    Config(Vec<String>),
    /// Exit code 3; the failing checks.
    Verification(Value),
}

impl CliError {
    pub fn config(violations: Vec<String>) -> Self {
        CliError::Config(violations)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> Value {
        match self {
            CliError::Runtime(m) => json!({"error": "runtime", "message": m}),
            CliError::Config(v) => json!({"error": "config", "violations": v}),
            CliError::Verification(d) => json!({"error": "verification", "failures": d}),
        }
    }
}

impl From<nsstat::Error> for CliError {
    fn from(e: nsstat::Error) -> Self {
        match e {
            nsstat::Error::Config(m) => CliError::Config(vec![m]),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
