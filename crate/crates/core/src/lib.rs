//! Ensemble pseudo-spectral Navier–Stokes solver on the periodic torus and a toolkit of
//! statistical-solution diagnostics: correlation observables, structure functions, the
//! Kármán–Howarth–Monin budget, Friedman–Keller residuals and vanishing-viscosity sweeps.

pub mod correlation;
pub mod ensemble;
pub mod error;
pub mod fft;
pub mod field;
pub mod grid;
pub mod io;
pub mod khm;
pub mod moments;
pub mod quadrature;
pub mod solver;
pub mod structure;
pub mod vvlimit;

pub use error::{Error, Result};
pub use field::{ScalarStat, Spectrum, VelocityField};
pub use grid::Grid;
pub use rustfft::num_complex::Complex64;
