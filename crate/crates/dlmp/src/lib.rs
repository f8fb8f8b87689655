//! File formats, configuration and the command-line front end for
//! [`dlmp_core`].

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod parallel;
