//! File formats, run configuration and the end-to-end pipeline around
//! `hrcae-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

pub use error::{Error, Result};
