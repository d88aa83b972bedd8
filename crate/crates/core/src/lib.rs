//! Sampling logconcave densities over convex bodies, and the numerical
//! machinery around isoperimetry of such densities: geometric random walks,
//! Cheeger/thin-shell/Poincaré estimators, rounding, annealing volume
//! estimation, optimization by sampling, and a discrete-time stochastic
//! localization simulator.

pub mod body;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod isotropy;
pub mod linalg;
pub mod rng;
pub mod samples;
pub mod sloc;
pub mod special;
pub mod volume;
pub mod walks;

pub use body::{Body, BodyKind, Chord};
pub use density::{DensityKind, DensitySpec, Quadratic};
pub use error::{Error, Result};
pub use estimate::Estimate;
pub use linalg::{AffineMap, CovMatrix};
pub use rng::RngStream;
pub use samples::SampleMatrix;
