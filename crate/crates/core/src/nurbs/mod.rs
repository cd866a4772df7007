//! B-spline and NURBS machinery: knot vectors, basis evaluation, rational
//! patches, refinement and conforming multi-patch meshes.

pub mod curve;
pub mod knots;
pub mod mesh;
pub mod patch;
pub mod refine;

pub use curve::{eval_nurbs_1d, NurbsCurve};
pub use knots::{eval_basis, greville_abscissae, BasisEval, KnotVector};
pub use mesh::{build_conforming_mesh, eval_frame, Element, ElementEval, LocalDof, SurfaceMesh};
pub use patch::{NurbsPatch, PatchBasis, SurfaceFrame};
pub use refine::{elevate_degree, h_refine, refine_uniform, refine_uniform_with};
