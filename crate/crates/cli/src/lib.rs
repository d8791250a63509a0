//! Configuration-driven sweeps producing key-rate CSVs and certification
//! reports.

pub mod config;
pub mod runner;
