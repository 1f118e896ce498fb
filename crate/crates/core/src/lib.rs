//! Compress a block of a trained network into a convex gated-ReLU student.
//!
//! The student is fitted by label-free activation matching: a group-lasso
//! problem over fixed gate patterns, solved with accelerated proximal
//! gradient, optionally polished with a group elastic net, then swapped back
//! into the frozen model for evaluation.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the double-precision types used by the solver and pipeline.

pub mod cli;
pub mod data;
pub mod error;
pub mod gates;
pub mod grelu;
pub mod nonconvex;
pub mod pipeline;
pub mod polish;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Matrix = data::DenseMatrix<f64>;
pub type Matrix32 = data::DenseMatrix<f32>;
pub type GateSet = gates::GateSet<f64>;
