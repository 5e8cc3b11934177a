//! The `jmap` pipeline as a library: configuration, stage runner, artifact
//! manifests and reports. `main.rs` is a thin clap front end.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod stages;
pub mod workspace;

pub use config::{Arm, ModalityChoice, PipelineConfig};
pub use error::{exit_code, ConfigError, InvariantViolation};
pub use workspace::{Stage, Workspace};

/// Written into the run directory when a stage fails.
pub const ERROR_FILE: &str = "error.json";

/// Keep freed large blocks in the heap instead of returning them to the OS.
/// Activations at 32³ are tens of megabytes, and glibc would otherwise map
/// and fault them in afresh on every batch; that cost a quarter of the
/// training time.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
