//! File formats, configuration and pipeline drivers around `chanmap-core`.
//!
//! The `chanmap` binary exposes the stages as subcommands; everything it
//! does is also available here as library calls.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod scene_file;

pub use chanmap_core as core;
pub use error::{Error, Result, Stage, StageError};
