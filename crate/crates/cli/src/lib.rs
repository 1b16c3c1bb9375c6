//! File formats, run configuration and the `selex` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;

pub use cli::run;
pub use config::RunConfig;
pub use error::CliError;
