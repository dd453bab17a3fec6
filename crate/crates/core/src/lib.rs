//! Numerical machinery for elastic shells immersed in constant-curvature
//! spaces: fundamental forms, stretching and bending energies, normal
//! extensions into a thickened manifold, compatibility residuals and an
//! energy-minimization harness.
//!
//! The crate is organized bottom-up:
//!
//! - [`ambient`]: flat, spherical and hyperbolic model spaces (metric,
//!   exponential and logarithm maps, parallel transport, Jacobi coefficients).
//! - [`chart`]: a rectangular parameter grid with finite-difference tensor
//!   calculus and quadrature.
//! - [`immersion`]: discrete immersions and their differential, normal,
//!   pullback metric, polar factor and shape operator.
//! - [`energy`]: stretching/bending energies and Sobolev-type distances.
//! - [`thickening`]: the metric on the thickened shell, normal extensions,
//!   the rotation-valued section and the rigidity gap.
//! - [`compatibility`]: Gauss and Codazzi residuals.
//! - [`minimize`]: projected descent on the discrete energy.
//! - [`scenarios`]: analytic builtin shells and random perturbations.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ambient;
pub mod chart;
pub mod compatibility;
pub mod energy;
mod error;
pub mod immersion;
pub mod minimize;
pub mod par;
pub mod scenarios;
pub mod thickening;

pub use error::{Error, Result};
