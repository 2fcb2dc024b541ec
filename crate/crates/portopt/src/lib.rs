//! Scenario-driven front end for the `portopt-core` optimizer: CSV panel
//! ingestion, declarative scenario files, run artifacts, and the
//! workflows behind the `portopt` binary.

pub mod commands;
pub mod io;
pub mod report;
pub mod scenario;
