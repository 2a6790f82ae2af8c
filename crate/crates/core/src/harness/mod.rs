//! Experiment configuration, reference runs and output files.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::{ExperimentConfig, FilterKind, ModelPermeability, Preset};
pub use experiment::{
    generate_reference, generate_reference_to_dir, metrics, run_experiment, run_with_model, sweep,
    ReferenceTrajectory, RunOutput, Setup, SweepRow,
};
