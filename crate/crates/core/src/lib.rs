//! Complete quantum measurements in finite dimension.
//!
//! The crate builds and checks discrete POVMs, their maximal rank-1
//! refinements, instruments in minimal Kraus form, minimal pure measurement
//! models (unitary dilations with a pointer observable), sequential
//! measurement schemes that realize the refined observable, and a
//! reproducible Monte Carlo sampler for measurement chains.

pub mod dilation;
pub mod error;
pub mod fixtures;
pub mod instrument;
pub mod io;
pub mod linalg;
pub mod montecarlo;
pub mod povm;
pub mod random;
pub mod sequential;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, DensityOperator, UnitaryOperator, DEFAULT_TOL};
