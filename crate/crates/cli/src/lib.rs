//! Command-line driver: configuration, output bookkeeping and the subcommands.

pub mod commands;
pub mod config;
pub mod output;
