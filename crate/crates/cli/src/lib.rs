//! Library side of the `projopt` command-line tool: plan bundles, CSV
//! input/output and the subcommands.

pub mod bundle;
pub mod commands;
pub mod csvio;
pub mod error;
pub mod plot;

pub use bundle::{Inputs, Overrides, PlanBundle};
pub use error::{CliError, Result};
