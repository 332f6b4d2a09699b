//! Library surface of the `adlog` pipeline binary: configuration loading,
//! profiles, and the subcommand implementations. The integration and
//! acceptance tests drive the pipeline through these functions.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod util;
