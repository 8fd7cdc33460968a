//! Mesh quality improvement built on convex quality objectives.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`]: vertex/element storage and connectivity queries.
//! - [`geometry`]: signed volumes, areas, perimeters and their exact gradients.
//! - [`quality`]: mean ratio, isoperimetric quotients, the `q` objectives and the
//!   λ-family, with element and mesh-level gradients.
//! - [`smooth`]: Laplacian, weighted Laplacian and gradient-ascent smoothing.
//! - [`topo`]: edge collapse, edge swap, vertex split and the bad-element removal loop.
//! - [`io`], [`generate`], [`report`], [`svg`]: files, test meshes, reports and pictures.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod generate;
pub mod geometry;
pub mod io;
pub mod mesh;
pub mod quality;
pub mod report;
pub mod smooth;
pub mod svg;
pub mod topo;

pub use error::{Error, Result};
pub use mesh::{Dim, Element, ElementKind, Mesh, Vec3};
pub use quality::{QualityFn, QualityKind};
pub use smooth::{Geometry, Method, SmoothConfig, SmoothResult};
