//! Normal-guided total-variation reconstruction from undersampled Fourier data.
//!
//! Images live on a periodic row-major grid ([`grid::Image`]). Measurements are
//! unitary DFT coefficients selected by a radial mask ([`sensing`]). The local
//! solvers ([`local`], [`normals`]) use Fourier-diagonal linear solves, the
//! non-local ones ([`graph`], [`nonlocal`]) a patch graph and conjugate gradients.

pub mod edge;
pub mod error;
pub mod fourier;
pub mod graph;
pub mod grid;
pub mod io;
pub mod local;
pub mod metrics;
pub mod nonlocal;
pub mod normals;
pub mod phantom;
pub mod sensing;

pub use error::{Error, Result};
pub use grid::{Image, VectorField};
pub use sensing::{Measurements, SamplingPlan, SensingOperator};
