//! Model reduction and feedback stabilization for index-2 descriptor systems
//! (incompressible-flow type DAEs `M v' = A v + G p + B u`, `Gᵀ v = 0`).
//!
//! The projected (hidden-manifold) dynamics are never formed explicitly:
//! every projector application is a sparse saddle-point solve.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod closedloop;
pub mod dense;
pub mod ekba;
pub mod error;
pub mod lu;
pub mod mmio;
pub mod mor;
pub mod oracle;
pub mod par;
pub mod riccati;
pub mod saddle;
pub mod sparse;
pub mod sysmodel;

pub use error::{Error, Result};
pub use nalgebra::Complex;
pub use par::Execution;
pub use sparse::SparseMatrix;
pub use sysmodel::{DescriptorSystem, Stability, SyntheticSpec};

pub type Complex64 = Complex<f64>;
