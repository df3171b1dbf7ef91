//! Config-driven pipeline behind the `mfsurrogate` binary.

pub mod commands;
pub mod config;

pub use commands::{CmdResult, Context, RunDir, StageError};
pub use config::RunConfig;
