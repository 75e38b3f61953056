//! Fixed numerical tolerances shared by the geometry and tessellation code.
//!
//! All lengths are in millimetres and all geometry is double precision.

/// A vertex within this distance of a plane is treated as lying on it.
pub const PLANE_EPS: f64 = 1e-10;

/// Vertices closer than this are merged after clipping.
pub const MERGE_EPS: f64 = 1e-9;

/// Coplanarity / convexity tolerance used when validating polyhedra.
pub const VALIDATE_EPS: f64 = 1e-9;

/// Shared faces below this area (mm^2) do not create an adjacency edge.
pub const MIN_SHARED_FACE_AREA: f64 = 1e-9;

/// Eigenvalues closer than this (relative) are treated as tied.
pub const EIGEN_TIE_EPS: f64 = 1e-12;

/// Pivot tolerance of the dense simplex used for the inscribed sphere.
pub const SIMPLEX_EPS: f64 = 1e-12;
