//! Config-driven experiments over the `dataval` valuators: build a noisy
//! dataset per seed, compute values, score them on the downstream tasks and
//! write CSV results and SVG charts.

pub mod config;
pub mod error;
pub mod report;
pub mod runner;
pub mod svg;

pub use config::{parse_config, parse_config_str, ExperimentConfig, TaskKind, ValuatorConfig};
pub use error::{HarnessError, Result};
pub use report::{read_report, write_csv, EvalReport};
pub use runner::run_experiment;
pub use svg::emit_svg;
