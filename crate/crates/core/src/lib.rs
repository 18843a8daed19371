//! Simulation toolkit for OAM photonics: mode synthesis, log-polar sorting,
//! high-dimensional QKD, weak-value direct measurement and ghost identification.

mod fft;
pub mod field;
pub mod ghostid;
pub mod io;
pub mod modes;
pub mod qkd;
pub mod sorter;
pub mod weakmeas;

pub use field::{ComplexField, FieldError, GridSpec, PhaseMask};
