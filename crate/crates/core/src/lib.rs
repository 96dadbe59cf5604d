//! Spectra and level-spacing statistics of quantum graphs.

// `!(x > 0.0)` is used throughout to reject NaN together with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod graph;
pub mod io;
pub mod numeric;
pub mod secular;
pub mod spacing;
pub mod torus;

pub use error::{Error, Result};
pub use graph::{Bond, Boundary, LengthBasis, MetricGraph};
