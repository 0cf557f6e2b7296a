//! Library side of the `mam` command-line tool.

pub mod commands;
pub mod scenario;

pub use commands::{evaluate, fit, report, simulate, CliError, CliResult, FitOverrides, FitSummary, Metrics};
pub use scenario::{Design, FitSpec, SimulationSpec};
