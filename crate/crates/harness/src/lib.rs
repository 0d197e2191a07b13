//! Manifest-driven experiment runner, CSV schema and table exporter.

pub mod config;
pub mod error;
pub mod export;
pub mod manifest;
pub mod runner;
pub mod schema;
pub mod verify;

pub use config::Config;
pub use error::{HarnessError, Result};
pub use export::export_tables;
pub use manifest::Manifest;
pub use runner::run_manifest;
