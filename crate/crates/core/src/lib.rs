//! Isogeometric boundary element solver for three-dimensional Helmholtz
//! problems posed on exact NURBS surfaces.
//!
//! The crate is organised bottom-up:
//!
//! - [`nurbs`]: B-spline/NURBS bases, patches, refinement and conforming meshes
//! - [`geometry`]: exact benchmark surfaces (spheres, torus, cube) and NACA profiles
//! - [`kernels`]: Green's function, its normal derivatives and regularising functions
//! - [`quadrature`]: Gauss rules, adaptive regular schemes and the Duffy-type singular rule
//! - [`assembly`]: collocation and Galerkin systems for every integral formulation
//! - [`analytic`]: closed-form and series reference solutions
//! - [`postprocess`]: field evaluation, far field, target strength, error norms
//! - [`cli`]: batch driver used by the `igabem` binary

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod assembly;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod nurbs;
pub mod postprocess;
pub mod quadrature;
pub mod vec3;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use vec3::Vec3;
