//! Configuration-driven experiment runner for the otto toolkit.

pub mod config;
pub mod experiment;
pub mod svg;

pub use config::{parse_config, ConfigError, ConfigErrors, ProblemKind, RunConfig};
pub use experiment::{build, grad_test, output_dir, run_experiment, Experiment, GradCheck, Summary, GRAD_TOLERANCE};
