//! Command-line pipeline for port-Hamiltonian observer design: configuration,
//! subcommands and result files.

pub mod commands;
pub mod config;
pub mod output;
