use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the saltcal core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: must be even and at least 8")]
    InvalidGrid(usize),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("grid mismatch: {left} vs {right} cells per axis")]
    GridMismatch { left: usize, right: usize },

    #[error("Sobolev order must be non-negative, got {0}")]
    NegativeSobolevOrder(i32),

    #[error("wavevector ({k1}, {k2}) is not resolvable on a {n}x{n} grid")]
    UnresolvableWavevector { k1: i32, k2: i32, n: usize },

    #[error("zero wavevector is not a valid noise basis element")]
    ZeroWavevector,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("CFL violation at t = {time}: dt*max|u|/h = {cfl:.3} exceeds 1")]
    Cfl { time: f64, cfl: f64 },

    #[error("non-finite vorticity at step {step} (t = {time}); blow-up or CFL violation")]
    BlowUp { step: usize, time: f64 },

    #[error("trajectory error: {0}")]
    Trajectory(String),

    #[error("need at least 2 snapshots, got {0}")]
    TooFewSnapshots(usize),

    #[error("requested N = {requested} exceeds the {available} available increments")]
    SampleCount { requested: usize, available: usize },

    #[error("estimator denominator {0:e} is zero or negligible: flow carries no signal along k-perp")]
    DegenerateDenominator(f64),

    #[error("all Gram eigenvalues are below {floor:e}: noise coefficients are unidentifiable")]
    Unidentifiable { floor: f64 },

    #[error("true amplitude must be non-zero for a relative error")]
    ZeroReference,

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes, not a trajectory file")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported trajectory format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated or corrupt file at record {record} (byte offset {offset})")]
    Truncated {
        path: PathBuf,
        record: u64,
        offset: u64,
    },

    #[error("{path}: file ends inside the header")]
    TruncatedHeader { path: PathBuf },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
