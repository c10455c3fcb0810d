//! Configuration, checkpoints and subcommands of the `fmca` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
