//! Near-field MIMO-SAR imaging of targets buried in a dielectric half-space.
//!
//! The crate covers the full experiment loop:
//!
//! * [`scene`]: aperture, sweep, medium and voxel grid description plus validation.
//! * [`em`]: wavenumbers, plane-wave spectral components and Snell/Fermat refraction.
//! * [`simulator`]: Born-approximation echo synthesis for point scatterers.
//! * [`operators`]: the matrix-free frequency-domain inverse operator and its exact adjoint.
//! * [`solver`]: ℓ1-regularised reconstruction by ADMM on top of the operators.
//! * [`ibp`]: refraction-aware back-projection, the slow reference reconstructor.
//! * [`metrics`]: image entropy, peak finding and dB max-projections.
//! * [`dataio`]: a self-describing little-endian volume file format and PNG export.

pub mod dataio;
pub mod em;
mod error;
pub mod ibp;
pub mod metrics;
pub mod operators;
pub mod scene;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Wave impedance of free space (ohms).
pub const FREE_SPACE_IMPEDANCE: f64 = 376.730_313_668;
