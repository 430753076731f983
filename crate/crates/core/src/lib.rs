//! Numerical core: the pseudo-metric a transport cost induces on Tⁿ × T̄ⁿ,
//! graphs of transport maps in it, and the angle-driven flow that moves those
//! graphs toward the optimal map.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod fd;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod lagrangian;
pub mod linalg;
pub mod oracle;
pub mod paracomplex;

pub use cost::{CostKind, CostModel, CutLocusGuard};
pub use error::{Error, Result};
pub use grid::{Accuracy, Grid, MatrixField, ScalarField, VectorField};
pub use linalg::SmallMat;
