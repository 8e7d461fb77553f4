//! Command-line front end: run configs, output directories, tables and manifests.

pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod store;
pub mod table;
