//! Agent-based simulation of workers jointly choosing where to live and how
//! to commute, with a calibration harness for the behavioral weights.
//!
//! The pipeline: [`scenario::Model::load`] reads the geographic layers and
//! the tabular profile/criteria/mode files, [`simulation::run_to_convergence`]
//! places agents and iterates relocation decisions until few agents move,
//! [`report::summarize`] condenses the outcome, and
//! [`calibration::calibrate`] searches the criteria that best reproduce
//! observed housing and mode-share distributions.

pub mod calibration;
pub mod choice;
pub mod error;
pub mod geodata;
pub mod geometry;
pub mod population;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulation;

pub use error::{Error, Result};
