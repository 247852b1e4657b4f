//! Experiment harness: scenario files, output writers, subcommand drivers,
//! convergence studies and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod convergence;
pub mod experiments;
pub mod io;
pub mod run;
pub mod scenario;
