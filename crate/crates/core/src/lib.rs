//! Numerical core: periodic spectral fields, the trigonometric control algebra,
//! the limit hydrodynamic control system, control synthesis and semiclassical
//! NLS solvers on the circle of length 2π.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]

#[cfg(test)]
extern crate std;

extern crate alloc;

mod fft;

pub mod curve;
pub mod error;
pub mod limit;
pub mod nls;
pub mod spectral;
pub mod stats;
pub mod synthesis;
pub mod trig;

pub use curve::TimeCurve;
pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use spectral::{ComplexField, PeriodicField, PeriodicGrid};
