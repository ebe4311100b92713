//! Command-line front end: scenario loading, solver orchestration, and
//! bit-specified file export.
//!
//! Exit-code contract: 0 success, 1 validation failure, 2 solver failure,
//! 3 I/O failure. All human-readable numeric output is printed with nine
//! significant digits; JSON files use exact round-trip float formatting
//! instead so that serialize -> load -> serialize is byte-identical.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::BridgeError;

pub mod bridge_io;
pub mod commands;
pub mod scenario;

pub use commands::{
    cmd_bridge_gaussian, cmd_bridge_grid, cmd_reproduce, cmd_residuals, cmd_simulate,
    ReproduceExample,
};
pub use scenario::Scenario;

/// CLI-level error, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Configuration or input-file problems (exit code 1).
    Validation(String),
    /// A solver refused or failed to converge (exit code 2).
    Solver(BridgeError),
    /// Filesystem problems (exit code 3).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation: {msg}"),
            CliError::Solver(err) => write!(f, "solver: {err}"),
            CliError::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<BridgeError> for CliError {
    fn from(err: BridgeError) -> Self {
        CliError::Solver(err)
    }
}

/// Format a number with nine significant digits (stable across runs).
pub fn sig9(v: f64) -> String {
    format!("{v:.8e}")
}

/// Write a file atomically: write to a sibling temp file, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut tmp_name = path.as_os_str().to_owned();
    tmp_name.push(".tmp");
    let tmp = PathBuf::from(tmp_name);
    std::fs::write(&tmp, contents)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Io(format!("renaming into {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_has_nine_significant_digits() {
        assert_eq!(sig9(0.5857864376269049), "5.85786438e-1");
        assert_eq!(sig9(-2.618033988749895), "-2.61803399e0");
        assert_eq!(sig9(0.0), "0.00000000e0");
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Solver(BridgeError::UncontrollableClosedLoop).exit_code(),
            2
        );
        assert_eq!(CliError::Io("x".into()).exit_code(), 3);
    }
}
