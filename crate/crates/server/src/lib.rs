pub mod api;
pub mod artifacts;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod snapshot;
