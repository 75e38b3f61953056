//! Exact convex-polyhedron primitives.
//!
//! A [`ConvexPolyhedron`] is stored as a vertex list plus counter-clockwise
//! (seen from outside) vertex-index rings. Every face also carries an optional
//! integer tag; clipping stamps the tag of the cutting plane onto the new cap
//! face, which is how the tessellation recovers which neighbour produced
//! which face.

mod axes;
mod bounds;
mod hull;
mod measure;
mod polyhedron;

pub use axes::{euler_zxz, principal_axes, rotation_from_euler_zxz, PrincipalAxes};
pub use bounds::{circumscribed_ball, inscribed_ball, sphere_bounds, Ball, SphereBounds};
pub use hull::convex_hull;
pub use measure::{measure, polygon_area, polygon_centroid, polygon_normal, Measures};
pub use polyhedron::{Clipped, ConvexPolyhedron, Plane};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Three-vector of millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate ellipsoid spec: {0}")]
    DegenerateSpec(String),
    #[error("point set is degenerate (fewer than four affinely independent points)")]
    DegeneratePoints,
    #[error("invalid polyhedron: {0}")]
    InvalidPolyhedron(String),
}

/// Reference-sphere diameter plus per-axis scale of an ellipsoidal particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    /// Reference sphere diameter `d` in mm.
    pub diameter: f64,
    /// Scale factors along X, Y, Z.
    pub scale: [f64; 3],
    /// Target number of triangular facets of the polyhedral approximation.
    pub facet_count: usize,
}

impl EllipsoidSpec {
    pub const DEFAULT_FACETS: usize = 320;

    pub fn new(diameter: f64, scale: [f64; 3]) -> Self {
        Self {
            diameter,
            scale,
            facet_count: Self::DEFAULT_FACETS,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.diameter > 0.0) || !self.diameter.is_finite() {
            return Err(GeometryError::DegenerateSpec(format!(
                "diameter must be positive, got {}",
                self.diameter
            )));
        }
        if let Some(s) = self.scale.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(GeometryError::DegenerateSpec(format!(
                "scale factors must be positive, got {s}"
            )));
        }
        if self.facet_count < 20 {
            return Err(GeometryError::DegenerateSpec(format!(
                "facet_count must be at least 20, got {}",
                self.facet_count
            )));
        }
        Ok(())
    }

    /// Semi-axes `(sx d/2, sy d/2, sz d/2)`.
    pub fn semi_axes(&self) -> Vec3 {
        Vec3::new(self.scale[0], self.scale[1], self.scale[2]) * (0.5 * self.diameter)
    }

    /// True when `p` lies inside the ellipsoid (not the polyhedron).
    pub fn contains(&self, p: &Vec3) -> bool {
        let a = self.semi_axes();
        (p.x / a.x).powi(2) + (p.y / a.y).powi(2) + (p.z / a.z).powi(2) <= 1.0
    }
}

/// Fibonacci-sphere points on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let theta = golden * i as f64;
            Vec3::new(r * theta.cos(), r * theta.sin(), z)
        })
        .collect()
}

/// Polyhedral ellipsoid: hull of a Fibonacci sphere mapped through the
/// semi-axes. A triangulated hull of `n` sphere points has `2n - 4` facets,
/// so `n = facet_count / 2 + 2`.
///
/// The sphere points are pushed out radially by a common factor so the
/// polyhedron has the volume of the smooth ellipsoid; a strictly inscribed
/// 320-facet hull is about 3.5% short.
pub fn ellipsoid_polyhedron(spec: &EllipsoidSpec) -> Result<ConvexPolyhedron, GeometryError> {
    spec.validate()?;
    let n = spec.facet_count / 2 + 2;
    let unit = fibonacci_sphere(n);
    // The hull of a linear image is the image of the hull, so triangulate on
    // the unit sphere (well conditioned) and map the vertices afterwards.
    let sphere = convex_hull(&unit)?;
    let inflate = (4.0 / 3.0 * std::f64::consts::PI / measure(&sphere).volume).cbrt();
    let a = spec.semi_axes() * inflate;
    let vertices = sphere
        .vertices()
        .iter()
        .map(|v| Vec3::new(v.x * a.x, v.y * a.y, v.z * a.z))
        .collect();
    Ok(ConvexPolyhedron::from_raw(
        vertices,
        sphere.faces().to_vec(),
        vec![None; sphere.faces().len()],
    ))
}
