//! Guided modes of line defects in two-dimensional photonic crystals (TE
//! polarization).
//!
//! The background is a periodic, piecewise-constant permittivity on the
//! unit square. A line defect raises the permittivity in a band of cell
//! rows. Defect modes inside a spectral gap are found by tracking the
//! lowest Rayleigh quotient of a resolvent operator restricted to the
//! range of the perturbation, and are cross-checked against a direct
//! eigensolve on a supercell.

pub mod analysis;
pub mod bands;
pub mod birman_schwinger;
pub mod error;
pub mod fourier;
pub mod greens;
pub mod linalg;
pub mod medium;
pub mod oracle;
pub mod strip;

pub use error::{Error, Result};
