//! Library side of the `lcsim` command-line tool.

pub mod commands;
pub mod output;
pub mod plot;
