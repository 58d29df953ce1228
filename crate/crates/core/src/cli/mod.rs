//! Experiment runner: configs in, CSV or JSON out.

pub mod bench;
pub mod config;
pub mod output;
pub mod pipeline;

pub use bench::{bench_em_compare, bench_subspace, bench_tmin, Stage};
pub use config::{Config, PresetKind};
pub use output::{Format, Table};
pub use pipeline::{run_pipeline, run_pipeline_with, PipelineOptions, PipelineReport, PipelineRun};
