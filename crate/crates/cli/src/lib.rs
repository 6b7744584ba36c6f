//! Configuration and command layer behind the `edl` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use commands::{Ctx, Outcome};
pub use config::{ConfigError, RunConfig};

/// Exit code and machine-readable error kind for a failed command.
pub fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    if err.downcast_ref::<ConfigError>().is_some() {
        (2, "config")
    } else if err.downcast_ref::<edl_core::Error>().is_some() {
        (3, "solver")
    } else {
        (3, "io")
    }
}
