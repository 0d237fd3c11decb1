//! Applications and tooling on top of `weaves-core`: demo applications,
//! the tapestry configuration format, the monitor, and file formats used by
//! the command-line tool.

pub mod apps;
pub mod error;

pub use error::{AppError, Result};
pub mod builtins;
pub mod config;
pub mod monitor;
pub mod checkpoint_file;
pub mod perfdb;
pub mod policy_file;
pub mod cli;
