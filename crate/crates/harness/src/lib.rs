//! Experiment harness for normal-guided compressed sensing: configuration
//! documents, the single-run pipeline with its metrics report, and
//! comparison tables across methods.

pub mod config;
pub mod error;
pub mod experiment;
pub mod table;

pub use config::{ConfigDocument, ExperimentSpec, Method};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, Experiment, MetricsReport};
pub use table::{run_table, TableReport};
