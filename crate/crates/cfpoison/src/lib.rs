//! Data loading, configuration, experiment sweeps and gradient checks on top of
//! [`cfpoison_core`].

pub mod config;
pub mod experiment;
pub mod gradcheck;
pub mod io;
pub mod movielens;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ResultRow};
