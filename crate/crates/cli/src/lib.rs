//! Command-line entry points and the HTTP edit service.

pub mod commands;
pub mod error;
pub mod grid;
pub mod model;
pub mod request;
pub mod service;

pub use error::CliError;
