//! Library surface of the command-line pipeline: configuration, run-directory
//! layout, report formats, and the stage implementations. The binary in
//! `main.rs` is a thin argument parser over these.

pub mod config;
pub mod paths;
pub mod report;
pub mod stages;
