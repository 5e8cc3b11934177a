//! Failure kinds that map to distinct exit codes.

use std::fmt;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Bad flags, unknown keys or out-of-range values.
pub const EXIT_CONFIG: i32 = 2;
/// A stage could not produce its outputs (I/O, numerics, missing inputs).
pub const EXIT_STAGE: i32 = 3;
/// A stage finished but its outputs broke a checked invariant.
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantViolation(pub String);

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invariant violated: {}", self.0)
    }
}

impl std::error::Error for InvariantViolation {}

/// Fail with an [`InvariantViolation`] unless `cond` holds.
pub fn ensure_invariant(cond: bool, msg: impl FnOnce() -> String) -> anyhow::Result<()> {
    if cond {
        Ok(())
    } else {
        Err(InvariantViolation(msg()).into())
    }
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        EXIT_CONFIG
    } else if err.chain().any(|e| e.is::<InvariantViolation>()) {
        EXIT_INVARIANT
    } else {
        EXIT_STAGE
    }
}
