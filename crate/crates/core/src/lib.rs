//! Discretized sum-product sets, δ-tubes and pencils.

mod bits;
pub mod arith;
pub mod constructions;
pub mod error;
pub mod experiments;
pub mod format;
pub mod grid;
pub mod radial;
pub mod refine;
pub mod tube;

pub use error::{Error, Result};
pub use grid::{CheckResult, Domain2D, GridSet1D, GridSet2D, NonConcentrationSpec, Witness};
