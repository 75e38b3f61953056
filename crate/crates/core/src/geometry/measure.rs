use serde::{Deserialize, Serialize};

use super::{ConvexPolyhedron, Mat3, Vec3};

/// Integral properties of a solid polyhedron with unit density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub volume: f64,
    pub surface_area: f64,
    pub centroid: Vec3,
    /// Inertia tensor about the centroid (unit density), mm^5.
    pub inertia: Mat3,
    /// Largest vertex-to-vertex distance.
    pub diameter: f64,
}

/// Divergence-theorem volume, area, centroid and inertia; each face is fanned
/// into triangles that form tetrahedra with a reference vertex.
pub fn measure(poly: &ConvexPolyhedron) -> Measures {
    let verts = poly.vertices();
    let r = verts[0];
    let mut volume = 0.0;
    let mut first = Vec3::zeros();
    let mut second = Mat3::zeros();
    let mut area = 0.0;
    for ring in poly.faces() {
        let a = verts[ring[0]] - r;
        for k in 1..ring.len() - 1 {
            let b = verts[ring[k]] - r;
            let c = verts[ring[k + 1]] - r;
            let cross = (b - a).cross(&(c - a));
            area += 0.5 * cross.norm();
            let v = a.dot(&b.cross(&c)) / 6.0;
            volume += v;
            let s = a + b + c;
            first += s * (v / 4.0);
            // Second moment of the tetrahedron (0, a, b, c) about the reference vertex.
            second += (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose())
                * (v / 20.0);
        }
    }
    let rel_centroid = first / volume;
    let about_centroid = second - rel_centroid * rel_centroid.transpose() * volume;
    let inertia = Mat3::identity() * about_centroid.trace() - about_centroid;
    Measures {
        volume,
        surface_area: area,
        centroid: r + rel_centroid,
        inertia,
        diameter: max_pairwise_distance(verts),
    }
}

pub(crate) fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.max((points[i] - points[j]).norm_squared());
        }
    }
    best.sqrt()
}

/// Unit normal of a planar polygon by Newell's method (CCW gives +normal).
pub fn polygon_normal(points: &[Vec3]) -> Vec3 {
    let mut n = Vec3::zeros();
    for k in 0..points.len() {
        let p = points[k];
        let q = points[(k + 1) % points.len()];
        n.x += (p.y - q.y) * (p.z + q.z);
        n.y += (p.z - q.z) * (p.x + q.x);
        n.z += (p.x - q.x) * (p.y + q.y);
    }
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        n
    }
}

pub fn polygon_area(points: &[Vec3]) -> f64 {
    let mut s = Vec3::zeros();
    for k in 1..points.len().saturating_sub(1) {
        s += (points[k] - points[0]).cross(&(points[k + 1] - points[0]));
    }
    0.5 * s.norm()
}

/// Area centroid of a planar polygon.
pub fn polygon_centroid(points: &[Vec3]) -> Vec3 {
    let n = polygon_normal(points);
    let mut acc = Vec3::zeros();
    let mut total = 0.0;
    for k in 1..points.len().saturating_sub(1) {
        let (a, b, c) = (points[0], points[k], points[k + 1]);
        let w = 0.5 * (b - a).cross(&(c - a)).dot(&n);
        acc += (a + b + c) * (w / 3.0);
        total += w;
    }
    if total.abs() > 0.0 {
        acc / total
    } else {
        points.iter().sum::<Vec3>() / points.len() as f64
    }
}
