//! File formats, data ingestion and the experiment pipeline around
//! [`emm_core`].

pub mod census;
pub mod cli;
pub mod config;
pub mod error;
pub mod format;
pub mod ingest;
pub mod pipeline;
pub mod report;

pub use error::{AppError, FormatError, Result};
