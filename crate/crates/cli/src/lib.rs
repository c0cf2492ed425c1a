//! Library side of the `atl` binary: configuration resolution, output
//! locking and the subcommand implementations.

pub mod commands;
pub mod config;
pub mod lock;
