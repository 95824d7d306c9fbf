//! Command-line pipeline: configuration, stages over on-disk artifacts, and
//! report rendering.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
