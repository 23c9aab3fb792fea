//! SUCPA prior-shift calibration, treated as a discrete dynamical system on
//! bias vectors.
//!
//! The map lives in [`map`], the two-class reduction in [`two_class`],
//! linearization in [`spectral`], and the user-facing calibration run in
//! [`calibration`]. [`io`] and [`cli`] handle files and the command line.

pub mod calibration;
pub mod check;
pub mod cli;
pub mod error;
pub mod io;
pub mod map;
pub mod numerics;
pub mod problem;
pub mod spectral;
pub mod synth;
pub mod two_class;

pub use calibration::{calibrate, cross_entropy, run_sucpa, CalibrationResult};
pub use error::{Result, SucpaError};
pub use map::{iterate_orbit, sucpa_step, Orbit};
pub use problem::{BetaVector, ClassCounts, PosteriorMatrix, SucpaProblem};
pub use two_class::{FixedLine, TwoClassProblem};
