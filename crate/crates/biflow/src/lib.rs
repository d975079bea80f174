//! Finite-difference experiments for constrained bi-harmonic maps of the
//! unit 4-ball into round spheres.
//!
//! The crate discretizes maps `u : B_1 (subset of R^4) -> S^m` on a uniform
//! lattice, provides the fourth-order machinery around them (centered
//! stencils, dual quadrature rules, intrinsic and extrinsic gradients), and
//! drives the experiments exposed by the `biflow` binary: gradient flows,
//! convexity and key-estimate checks, Hardy and monotonicity quantities, and
//! a clamped bi-harmonic Green kernel.
//!
//! All reductions go through fixed-shape pairwise trees ([`par`]), so results
//! are bit-identical with and without the `parallel` feature and for any
//! thread count.

pub mod error;
pub mod par;

pub mod grid;

pub mod field;

pub mod ops;

pub mod maps;
pub mod sphere;
pub mod flow;
pub mod convexity;
pub mod analysis;
pub mod green;
pub mod config;
pub mod report;

pub use error::{Error, Result};
