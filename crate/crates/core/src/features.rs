//! Morphology descriptors of a particle plus node, edge and distance
//! features of its fragment graph.
//!
//! The 35 descriptors are listed, in order, in `registry/pmd.csv` (name,
//! category, unit, formula). The registry is compiled in and every name in
//! it must have an implementation below.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    euler_zxz, measure, polygon_area, polygon_centroid, polygon_normal, principal_axes, sphere_bounds,
    ConvexPolyhedron, Mat3, Vec3,
};
use crate::tessellation::FragmentMesh;

pub const PMD_VERSION: &str = "pmd/1";
pub const PMD_LEN: usize = 35;
pub const NODE_FEATURES: usize = 11;
pub const EDGE_FEATURES: usize = 9;
pub const DISTANCE_FEATURES: usize = 8;

pub const NODE_FEATURE_NAMES: [&str; NODE_FEATURES] = [
    "volume",
    "surface_area",
    "diameter",
    "n_faces",
    "n_neighbors",
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "euler_alpha",
    "euler_beta",
    "euler_gamma",
];

pub const EDGE_FEATURE_NAMES: [&str; EDGE_FEATURES] = [
    "contact_area",
    "n_lines",
    "max_length",
    "centroid_x",
    "centroid_y",
    "centroid_z",
    "euler_alpha",
    "euler_beta",
    "euler_gamma",
];

const REGISTRY_CSV: &str = include_str!("../registry/pmd.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("cell index {0} out of range")]
    NoSuchCell(usize),
    #[error("edge index {0} out of range")]
    NoSuchEdge(usize),
    #[error("descriptor {0} is not finite")]
    NonFinite(String),
    #[error("mesh needs at least two cells")]
    TooFewCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PmdCategory {
    Geometric,
    Form,
    Roundness,
    Sphericity,
    Instability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdEntry {
    pub name: String,
    pub category: PmdCategory,
    pub unit: String,
    pub formula: String,
}

/// Registry rows in column order.
pub fn pmd_registry() -> Vec<PmdEntry> {
    REGISTRY_CSV
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut parts = line.splitn(4, ',');
            let mut next = || parts.next().expect("registry row has four fields").to_string();
            let name = next();
            let category = match next().as_str() {
                "geometric" => PmdCategory::Geometric,
                "form" => PmdCategory::Form,
                "roundness" => PmdCategory::Roundness,
                "sphericity" => PmdCategory::Sphericity,
                "instability" => PmdCategory::Instability,
                other => panic!("unknown registry category {other}"),
            };
            PmdEntry {
                name,
                category,
                unit: next(),
                formula: next(),
            }
        })
        .collect()
}

pub fn pmd_names() -> Vec<String> {
    pmd_registry().into_iter().map(|e| e.name).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmdVector {
    pub version: String,
    pub values: Vec<f64>,
}

impl PmdVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        pmd_names().iter().position(|n| n == name).map(|k| self.values[k])
    }
}

/// Shape quantities every descriptor is built from.
struct Shape {
    v: f64,
    a: f64,
    l: f64,
    i: f64,
    s: f64,
    d_eq: f64,
    d_ins: f64,
    d_cir: f64,
    roundness: [f64; 3],
    offset: f64,
}

pub fn compute_pmd(particle: &ConvexPolyhedron) -> Result<PmdVector, FeatureError> {
    let m = measure(particle);
    let axes = principal_axes(particle);
    let bounds = sphere_bounds(particle);
    let shape = Shape {
        v: m.volume,
        a: m.surface_area,
        l: 2.0 * axes.semi_lengths.x,
        i: 2.0 * axes.semi_lengths.y,
        s: 2.0 * axes.semi_lengths.z,
        d_eq: (6.0 * m.volume / PI).cbrt(),
        d_ins: bounds.inscribed_diameter,
        d_cir: bounds.circumscribed_diameter,
        roundness: roundness(particle, bounds.inscribed_diameter),
        offset: 0.0,
    };
    let shape = Shape {
        offset: centroid_offset(particle, &m.centroid) / shape.s,
        ..shape
    };
    let values: Vec<f64> = pmd_names().iter().map(|n| descriptor(n, &shape)).collect();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite(pmd_names()[k].clone()));
    }
    Ok(PmdVector {
        version: PMD_VERSION.to_string(),
        values,
    })
}

fn descriptor(name: &str, sh: &Shape) -> f64 {
    let Shape { v, a, l, i, s, d_eq, d_ins, d_cir, .. } = *sh;
    // L - S below round-off: a sphere, where the disc-rod index is 1/2 by continuity.
    let spread = l - s;
    let round_off = spread <= 1e-12 * l;
    let disc_rod = if round_off { 0.5 } else { (l - i) / spread };
    match name {
        "volume" => v,
        "surface_area" => a,
        "long_length" => l,
        "intermediate_length" => i,
        "short_length" => s,
        "equivalent_diameter" => d_eq,
        "inscribed_diameter" => d_ins,
        "circumscribed_diameter" => d_cir,
        "mean_length" => (l + i + s) / 3.0,
        "elongation" => i / l,
        "flatness" => s / i,
        "aspect_ratio" => s / l,
        "corey_factor" => s / (l * i).sqrt(),
        "janke_factor" => s / ((l * l + i * i + s * s) / 3.0).sqrt(),
        "disc_rod_index" => disc_rod,
        "aschenbrenner_shape_factor" => s * l / (i * i),
        "williams_shape_factor" => {
            let r = l * s / (i * i);
            if r <= 1.0 {
                1.0 - r
            } else {
                r - 1.0
            }
        }
        "oblate_prolate_index" => {
            if round_off {
                0.0
            } else {
                10.0 * (disc_rod - 0.5) / (s / l)
            }
        }
        "wentworth_flatness" => (l + i) / (2.0 * s),
        "bagheri_form_factor" => (s / i) * (i / l).powf(1.3) * d_eq.powi(3) / (l * i * s),
        "zingg_isometry_distance" => ((1.0 - s / i).powi(2) + (1.0 - i / l).powi(2)).sqrt(),
        "bulkiness" => v / (PI / 6.0 * l * i * s),
        "mean_angular_defect" => sh.roundness[0],
        "dihedral_smoothness" => sh.roundness[1],
        "corner_radius_ratio" => sh.roundness[2],
        "wadell_sphericity" => PI.cbrt() * (6.0 * v).powf(2.0 / 3.0) / a,
        "krumbein_sphericity" => (i * s / (l * l)).cbrt(),
        "sneed_folk_sphericity" => (s * s / (l * i)).cbrt(),
        "riley_sphericity" => (d_ins / d_cir).sqrt(),
        "aschenbrenner_sphericity" => {
            let (p, q) = (s / i, i / l);
            12.8 * (p * p * q).cbrt() / (1.0 + p * (1.0 + q) + 6.0 * (1.0 + p * p * (1.0 + q * q)).sqrt())
        }
        "diameter_sphericity" => d_eq / d_cir,
        "inscribed_sphericity" => d_ins / d_eq,
        "circle_ratio_sphericity" => d_ins / d_cir,
        "mean_diameter_sphericity" => d_eq / ((l + i + s) / 3.0),
        "centroid_offset" => sh.offset,
        other => panic!("registry descriptor {other} has no implementation"),
    }
}

/// Mean angular defect, dihedral smoothness and corner-radius ratio.
fn roundness(poly: &ConvexPolyhedron, d_ins: f64) -> [f64; 3] {
    let verts = poly.vertices();
    let nv = verts.len();
    let mut angle_sum = vec![0.0; nv];
    let mut area_share = vec![0.0; nv];
    let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (f, ring) in poly.faces().iter().enumerate() {
        let pts = poly.face_points(f);
        let share = polygon_area(&pts) / ring.len() as f64;
        for k in 0..ring.len() {
            let (prev, cur, next) = (ring[(k + ring.len() - 1) % ring.len()], ring[k], ring[(k + 1) % ring.len()]);
            let (u, w) = (verts[prev] - verts[cur], verts[next] - verts[cur]);
            angle_sum[cur] += u.angle(&w);
            area_share[cur] += share;
            edge_faces.entry((cur.min(next), cur.max(next))).or_default().push(f);
        }
    }
    let defects: Vec<f64> = angle_sum.iter().map(|s| 2.0 * PI - s).collect();
    let mean_defect = defects.iter().sum::<f64>() / nv as f64;
    let normals: Vec<Vec3> = (0..poly.faces().len()).map(|f| poly.face_normal(f)).collect();
    let mut edges: Vec<_> = edge_faces.into_iter().collect();
    edges.sort_by_key(|e| e.0);
    let dihedral: Vec<f64> = edges
        .iter()
        .filter(|(_, fs)| fs.len() == 2)
        .map(|(_, fs)| (PI - normals[fs[0]].angle(&normals[fs[1]])) / PI)
        .collect();
    let smooth = dihedral.iter().sum::<f64>() / dihedral.len().max(1) as f64;
    let radius = defects
        .iter()
        .zip(&area_share)
        .map(|(d, a)| 1.0 / (d.max(1e-300) / a).sqrt())
        .sum::<f64>()
        / nv as f64;
    [mean_defect, smooth, radius / (0.5 * d_ins)]
}

/// In-plane distance between the centroid and the centroid of the largest
/// face (the face the particle would rest on). Ties go to the lower index.
fn centroid_offset(poly: &ConvexPolyhedron, centroid: &Vec3) -> f64 {
    let mut best = (0, f64::NEG_INFINITY);
    for f in 0..poly.faces().len() {
        let a = polygon_area(&poly.face_points(f));
        if a > best.1 * (1.0 + 1e-12) {
            best = (f, a);
        }
    }
    let pts = poly.face_points(best.0);
    let n = poly.face_normal(best.0);
    let d = centroid - polygon_centroid(&pts);
    (d - n * n.dot(&d)).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub volume: f64,
    pub surface_area: f64,
    pub diameter: f64,
    pub n_faces: usize,
    pub n_neighbors: usize,
    pub centroid: Vec3,
    pub euler: Vec3,
}

impl NodeFeatures {
    pub fn to_array(&self) -> [f64; NODE_FEATURES] {
        [
            self.volume,
            self.surface_area,
            self.diameter,
            self.n_faces as f64,
            self.n_neighbors as f64,
            self.centroid.x,
            self.centroid.y,
            self.centroid.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
        ]
    }
}

pub fn compute_node_features(mesh: &FragmentMesh, cell: usize) -> Result<NodeFeatures, FeatureError> {
    let poly = mesh.cells.get(cell).ok_or(FeatureError::NoSuchCell(cell))?;
    let m = measure(poly);
    Ok(NodeFeatures {
        volume: m.volume,
        surface_area: m.surface_area,
        diameter: m.diameter,
        n_faces: poly.faces().len(),
        n_neighbors: mesh.degree(cell),
        centroid: m.centroid,
        euler: principal_axes(poly).euler,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub contact_area: f64,
    pub n_lines: usize,
    pub max_length: f64,
    pub centroid: Vec3,
    pub euler: Vec3,
}

impl EdgeFeatures {
    pub fn to_array(&self) -> [f64; EDGE_FEATURES] {
        [
            self.contact_area,
            self.n_lines as f64,
            self.max_length,
            self.centroid.x,
            self.centroid.y,
            self.centroid.z,
            self.euler.x,
            self.euler.y,
            self.euler.z,
        ]
    }
}

pub fn compute_edge_features(mesh: &FragmentMesh, edge: usize) -> Result<EdgeFeatures, FeatureError> {
    let face = mesh.adjacency.get(edge).ok_or(FeatureError::NoSuchEdge(edge))?;
    Ok(polygon_features(&face.polygon, &face.normal))
}

/// Area, side count, longest chord, centroid and frame angles of a planar
/// polygon. The frame is (major in-plane axis, normal x major, normal).
pub fn polygon_features(polygon: &[Vec3], normal: &Vec3) -> EdgeFeatures {
    let n = if normal.norm() > 0.0 { normal.normalize() } else { polygon_normal(polygon) };
    let c = polygon_centroid(polygon);
    let mut cov = Mat3::zeros();
    for p in polygon {
        let d = (p - c) - n * n.dot(&(p - c));
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    // Largest in-plane eigenvector; the normal direction has eigenvalue 0.
    let k = eig.eigenvalues.imax();
    let mut major: Vec3 = eig.eigenvectors.column(k).into_owned();
    major = (major - n * n.dot(&major)).normalize();
    if major[major.iamax()] < 0.0 {
        major = -major;
    }
    let frame = Mat3::from_columns(&[major, n.cross(&major), n]);
    let mut max_len = 0.0f64;
    for a in 0..polygon.len() {
        for b in (a + 1)..polygon.len() {
            max_len = max_len.max((polygon[a] - polygon[b]).norm());
        }
    }
    EdgeFeatures {
        contact_area: polygon_area(polygon),
        n_lines: polygon.len(),
        max_length: max_len,
        centroid: c,
        euler: euler_zxz(&frame),
    }
}

/// Per cell, the eight largest distances to other cell centroids; for the
/// particle, the eight largest centroid pair distances. Descending,
/// zero-padded.
pub fn distance_features(mesh: &FragmentMesh) -> Result<(Vec<[f64; 8]>, [f64; 8]), FeatureError> {
    let n = mesh.n_cells();
    if n < 2 {
        return Err(FeatureError::TooFewCells);
    }
    let cents: Vec<Vec3> = mesh.cells.iter().map(|c| measure(c).centroid).collect();
    let mut per_node = Vec::with_capacity(n);
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        let mut d: Vec<f64> = (0..n).filter(|&b| b != a).map(|b| (cents[a] - cents[b]).norm()).collect();
        per_node.push(top8(&mut d));
        pairs.extend(((a + 1)..n).map(|b| (cents[a] - cents[b]).norm()));
    }
    Ok((per_node, top8(&mut pairs)))
}

fn top8(v: &mut [f64]) -> [f64; 8] {
    v.sort_by(|a, b| b.total_cmp(a));
    let mut out = [0.0; 8];
    for (o, x) in out.iter_mut().zip(v.iter()) {
        *o = *x;
    }
    out
}
