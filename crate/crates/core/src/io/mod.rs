//! Run configuration, file formats and result emission.

pub mod config;
pub mod formats;
pub mod manifest;
pub mod run;

pub use config::{Mode, RunConfig};
pub use manifest::{verify, Manifest, OutputDir};
pub use run::execute;
