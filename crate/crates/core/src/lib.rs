//! Simulation and pathwise calibration toolkit for the stochastic 2D Euler
//! equation with transport noise on the unit torus.

// Ordering checks are written so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod config;
pub mod error;
pub mod field;
pub mod noise;
pub mod robustness;
pub mod solver;
pub mod spectral;
pub mod trajectory_io;

#[cfg(test)]
mod test_support;

pub use calibration::{CalibrationResult, QvField};
pub use config::Config;
pub use error::{Error, Result};
pub use field::{Grid, ScalarField, Spectrum, VectorField};
pub use noise::{BrownianPath, NoiseMode, NoiseModel, Wavevector};
pub use robustness::{PairedRun, RobustnessReport};
pub use solver::{SimParams, SnapshotSink, Trajectory, TrajectoryMeta};
pub use trajectory_io::{read_trajectory, write_trajectory};

pub use nalgebra;
