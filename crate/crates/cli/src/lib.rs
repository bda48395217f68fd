//! Pipeline orchestration, run configuration and plotting for the
//! `hyperleaf` command-line tool.

pub mod config;
pub mod pipeline;
pub mod plot;

pub use config::{RunConfig, Stage};
pub use pipeline::{run_pipeline, PipelineOutcome, PipelineSummary, StageError, SummaryRow};
