//! Experiment plumbing: datasets, configuration, metrics files and figures.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod plot;

pub use dataset::{generate_dataset, Dataset, DatasetError, DatasetKind};
pub use metrics::{emit_history, emit_metrics, read_metrics, MetricsError, RunRecord};
pub use plot::{emit_plot, render_svg, PlotError};
