//! Experiment runner for `heiskern-core`: configuration, parallel execution,
//! reports and the `heiskern` command line.

pub mod cli;
pub mod config;
pub mod exec;
pub mod experiments;
pub mod formats;
pub mod report;
