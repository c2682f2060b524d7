//! File formats, seeded experiments and the `diffreg` command line on top
//! of `diffreg-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod io;

pub use diffreg_core as core;
pub use error::{CliError, Result};
