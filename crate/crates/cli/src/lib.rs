//! Command-line front end: dataset files, fitting, selection, simulation
//! replicates and the verification suite.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod model;
pub mod replicate;
pub mod verify;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
