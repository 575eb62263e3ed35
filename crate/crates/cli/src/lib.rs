//! Library side of the `confbound` command-line tool.

pub mod commands;
pub mod config;
