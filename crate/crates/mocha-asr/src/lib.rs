//! File formats, experiment commands and CSV reporting around
//! [`mocha_asr_core`].

pub mod checkpoint;
pub mod commands;
pub mod container;
pub mod dataset;
pub mod error;
pub mod report;

pub use error::{AppError, AppResult};
