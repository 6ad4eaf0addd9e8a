//! Numerical periodic homogenization laboratory.
//!
//! The crate solves periodic cell problems for elliptic systems with lower-order
//! terms, assembles the homogenized tensors, solves oscillating and homogenized
//! Neumann problems on the unit box, builds first-order corrector expansions,
//! and runs convergence sweeps that fit the observed rates.

pub mod cell;
pub mod config;
pub mod error;
pub mod expansion;
pub mod fft;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod homog;
pub mod quad;
pub mod smoothing;
pub mod solver;
pub mod sparse;

pub use cell::CorrectorSet;
pub use config::{CoefficientSpec, SweepConfig};
pub use error::HomlabError;
pub use expansion::{ExpansionErrors, PhiStrategy};
pub use fields::{CoefficientSet, PeriodicField, Preset};
pub use grid::GridFunction;
pub use harness::ConvergenceReport;
pub use homog::HomogenizedSet;
pub use solver::{ProblemData, SolveResult};
