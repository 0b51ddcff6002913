//! Subcommands of the `lcx` tool and the file formats they share.

pub mod commands;
pub mod config;
pub mod curves;
pub mod error;
