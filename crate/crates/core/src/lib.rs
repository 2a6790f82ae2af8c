//! Two-phase flow in porous media with ensemble score filter data assimilation.
//!
//! The crate couples a mixed finite element / IMPES forward solver with the
//! training-free Ensemble Score Filter (EnSF) and an LETKF baseline, plus the
//! experiment harness used for twin experiments.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`, which is what the harness uses.

pub mod ensf_filter;
pub mod error;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod letkf_baseline;
pub mod observation;
pub mod rng;
pub mod scalar;
pub mod score_diffusion;
pub mod state;
pub mod twophase;

pub use error::{Error, Result};
pub use grid::{FaceRef, Grid, Orientation};
pub use scalar::Real;
pub use state::{FluxField, ScalarField, StateLayout, StateVector, Variable};
pub use twophase::{BoundaryData, SolverParams, TwoPhaseSolver};

pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type StateVector64 = StateVector<f64>;
pub type StateVector32 = StateVector<f32>;
pub type ScalarField64 = ScalarField<f64>;
pub type SolverParams64 = SolverParams<f64>;
pub type TwoPhaseSolver64 = TwoPhaseSolver<f64>;
