//! Magnetic and thermostat flows on conformal tori: geodesic dynamics, symmetric
//! tensor calculus for the magnetic potential operator, fiber lifting, ray
//! transforms, a microlocal normal operator, and rigidity diagnostics.
//!
//! All surfaces are periodic rectangles `[0, Lx) x [0, Ly)` with metric
//! `e^{2 phi} (dx^2 + dy^2)`, discretized on uniform grids and differentiated
//! spectrally.

pub mod dense;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod lifting;
pub mod normal_op;
pub mod rigidity;
pub mod spectral;
pub mod tensor;
pub mod xray;

pub use error::{MagrayError, Result};
