//! File formats, dataset loading and command implementations on top of
//! [`erasood_core`].
//!
//! Datasets are addressed by URI (`idx:<path>`, `imgb:<path>`,
//! `synth:<family>:<n>:<seed>`), runs are described by a plain-text
//! [`RunConfig`], and every command writes fixed file names under its output
//! directory.

pub mod commands;
pub mod config;
mod error;
pub mod formats;
pub mod report;
pub mod uri;

pub use config::RunConfig;
pub use erasood_core as core;
pub use error::{Error, Result, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OUTPUT};
pub use uri::DatasetUri;
