//! Seeded Voronoi tessellation of a particle into convex fragment cells.
//!
//! Every cell is the particle polyhedron clipped by the bisector half-spaces
//! of its seed against all other seeds. The bisector face produced by seed
//! `j` is tagged with `j`, which gives the adjacency for free.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    ellipsoid_polyhedron, measure, polygon_area, Clipped, ConvexPolyhedron, EllipsoidSpec,
    GeometryError, Mat3, Plane, Vec3,
};
use crate::tolerances::MIN_SHARED_FACE_AREA;

pub const MESH_SCHEMA: &str = "crushgraph.mesh/1";

/// Reference diameter at which the particle holds the minimum seed count.
pub const BASE_DIAMETER: f64 = 11.86;
pub const MIN_SEEDS: usize = 8;
pub const MAX_SEEDS: usize = 216;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TessellationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("need at least two seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("seed {0} is not strictly inside the particle")]
    SeedOutside(usize),
    #[error("seed {0} produced an empty cell")]
    EmptyCell(usize),
    #[error("adjacency graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("schema mismatch: expected {expected}, found {found}")]
    Schema { expected: String, found: String },
    #[error("malformed mesh file: {0}")]
    Parse(String),
}

/// Planar face shared by cells `i < j`; the polygon is CCW about `normal`,
/// which points from cell `i` into cell `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedFace {
    pub i: usize,
    pub j: usize,
    pub polygon: Vec<Vec3>,
    pub area: f64,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentMesh {
    pub schema: String,
    pub particle: EllipsoidSpec,
    pub particle_poly: ConvexPolyhedron,
    pub cells: Vec<ConvexPolyhedron>,
    pub seeds: Vec<Vec3>,
    pub adjacency: Vec<SharedFace>,
    pub rng_seed: u64,
    /// Centroid-replacement passes that re-tessellated the particle.
    pub lloyd_iterations: usize,
    /// Max seed-to-centroid displacement observed at each pass.
    pub lloyd_history: Vec<f64>,
}

/// `round(8 (d / 11.86)^3)` clamped to `[8, 216]`.
pub fn seed_count(diameter: f64) -> usize {
    let n = (MIN_SEEDS as f64 * (diameter / BASE_DIAMETER).powi(3)).round();
    (n.max(MIN_SEEDS as f64) as usize).min(MAX_SEEDS)
}

/// Uniform seeds by rejection from the ellipsoid bounding box. A candidate is
/// kept only if it is strictly inside the polyhedral particle, so every seed
/// owns a non-empty cell.
pub fn generate_seeds(spec: &EllipsoidSpec, rng_seed: u64) -> Result<Vec<Vec3>, TessellationError> {
    let poly = ellipsoid_polyhedron(spec)?;
    Ok(seeds_in(&poly, spec, seed_count(spec.diameter), rng_seed))
}

fn seeds_in(poly: &ConvexPolyhedron, spec: &EllipsoidSpec, n: usize, rng_seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let a = spec.semi_axes() * 1.05;
    let margin = -1e-6 * spec.diameter;
    let mut seeds = Vec::with_capacity(n);
    while seeds.len() < n {
        let p = Vec3::new(
            rng.random_range(-a.x..a.x),
            rng.random_range(-a.y..a.y),
            rng.random_range(-a.z..a.z),
        );
        if poly.contains(&p, margin) {
            seeds.push(p);
        }
    }
    seeds
}

/// Seeds, Voronoi cells and Lloyd refinement in one call.
pub fn tessellate(
    spec: &EllipsoidSpec,
    rng_seed: u64,
    lloyd: Option<LloydControl>,
) -> Result<FragmentMesh, TessellationError> {
    let seeds = generate_seeds(spec, rng_seed)?;
    let mut mesh = voronoi(spec, &seeds)?;
    mesh.rng_seed = rng_seed;
    match lloyd {
        Some(c) => lloyd_refine(&mesh, c.max_iters, c.tol_rel * spec.diameter),
        None => Ok(mesh),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LloydControl {
    pub max_iters: usize,
    /// Displacement tolerance as a fraction of the diameter.
    pub tol_rel: f64,
}

impl Default for LloydControl {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol_rel: 1e-3,
        }
    }
}

pub fn voronoi(spec: &EllipsoidSpec, seeds: &[Vec3]) -> Result<FragmentMesh, TessellationError> {
    let particle = ellipsoid_polyhedron(spec)?;
    voronoi_in(spec, particle, seeds)
}

fn voronoi_in(
    spec: &EllipsoidSpec,
    particle: ConvexPolyhedron,
    seeds: &[Vec3],
) -> Result<FragmentMesh, TessellationError> {
    if seeds.len() < 2 {
        return Err(TessellationError::TooFewSeeds(seeds.len()));
    }
    if let Some(i) = seeds.iter().position(|s| !particle.contains(s, -1e-12)) {
        return Err(TessellationError::SeedOutside(i));
    }
    let mut cells = Vec::with_capacity(seeds.len());
    for (i, si) in seeds.iter().enumerate() {
        let mut order: Vec<usize> = (0..seeds.len()).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            (seeds[a] - si)
                .norm_squared()
                .total_cmp(&(seeds[b] - si).norm_squared())
                .then(a.cmp(&b))
        });
        let mut cell = particle.clone();
        let mut reach = cell.max_distance_from(si);
        for j in order {
            // Bisectors farther than the current cell extent cannot cut it.
            if 0.5 * (seeds[j] - si).norm() > reach {
                break;
            }
            match cell.clip_tagged(&Plane::bisector(si, &seeds[j]), Some(j)) {
                Clipped::Unchanged => {}
                Clipped::Empty => return Err(TessellationError::EmptyCell(i)),
                Clipped::Cut(c) => {
                    cell = c;
                    reach = cell.max_distance_from(si);
                }
            }
        }
        cells.push(cell);
    }
    let adjacency = shared_faces(&cells);
    Ok(FragmentMesh {
        schema: MESH_SCHEMA.to_string(),
        particle: *spec,
        particle_poly: particle,
        cells,
        seeds: seeds.to_vec(),
        adjacency,
        rng_seed: 0,
        lloyd_iterations: 0,
        lloyd_history: Vec::new(),
    })
}

/// Faces tagged with the other cell on both sides and of area above the
/// sliver threshold on both sides.
fn shared_faces(cells: &[ConvexPolyhedron]) -> Vec<SharedFace> {
    let tagged = |c: usize, other: usize| -> Option<(usize, f64)> {
        let cell = &cells[c];
        cell.face_tags()
            .iter()
            .position(|t| *t == Some(other))
            .map(|f| (f, polygon_area(&cell.face_points(f))))
    };
    let mut out = Vec::new();
    for i in 0..cells.len() {
        let mut neighbours: Vec<usize> = cells[i]
            .face_tags()
            .iter()
            .flatten()
            .copied()
            .filter(|&j| j > i)
            .collect();
        neighbours.sort_unstable();
        neighbours.dedup();
        for j in neighbours {
            let (Some((fi, ai)), Some((_, aj))) = (tagged(i, j), tagged(j, i)) else {
                continue;
            };
            if ai > MIN_SHARED_FACE_AREA && aj > MIN_SHARED_FACE_AREA {
                out.push(SharedFace {
                    i,
                    j,
                    polygon: cells[i].face_points(fi),
                    area: ai,
                    normal: cells[i].face_normal(fi),
                });
            }
        }
    }
    out
}

/// Repeats seed <- cell centroid until the largest seed displacement drops
/// below `tol` (mm) or `max_iters` re-tessellations have run.
pub fn lloyd_refine(
    mesh: &FragmentMesh,
    max_iters: usize,
    tol: f64,
) -> Result<FragmentMesh, TessellationError> {
    let mut current = mesh.clone();
    let mut history = mesh.lloyd_history.clone();
    let mut iterations = mesh.lloyd_iterations;
    for _ in 0..=max_iters {
        let centroids: Vec<Vec3> = current.cells.iter().map(|c| measure(c).centroid).collect();
        let disp = centroids
            .iter()
            .zip(&current.seeds)
            .map(|(c, s)| (c - s).norm())
            .fold(0.0, f64::max);
        history.push(disp);
        if disp < tol || iterations - mesh.lloyd_iterations >= max_iters {
            break;
        }
        let rng_seed = current.rng_seed;
        current = voronoi_in(&mesh.particle, current.particle_poly.clone(), &centroids)?;
        current.rng_seed = rng_seed;
        iterations += 1;
    }
    current.lloyd_iterations = iterations;
    current.lloyd_history = history;
    Ok(current)
}

impl FragmentMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn degree(&self, cell: usize) -> usize {
        self.adjacency
            .iter()
            .filter(|f| f.i == cell || f.j == cell)
            .count()
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells.len()];
        for f in &self.adjacency {
            out[f.i].push(f.j);
            out[f.j].push(f.i);
        }
        out
    }

    /// Number of connected components of the adjacency graph.
    pub fn components(&self) -> usize {
        let nb = self.neighbours();
        let mut seen = vec![false; nb.len()];
        let mut count = 0;
        for start in 0..nb.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &nb[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        count
    }

    pub fn check_connected(&self) -> Result<(), TessellationError> {
        match self.components() {
            1 => Ok(()),
            components => Err(TessellationError::Disconnected { components }),
        }
    }

    /// The same mesh under a proper rotation about the origin. The particle
    /// spec is left as generated; only the geometry moves.
    pub fn rotated(&self, rotation: &Mat3) -> Self {
        let zero = Vec3::zeros();
        Self {
            particle_poly: self.particle_poly.transformed(rotation, &zero),
            cells: self.cells.iter().map(|c| c.transformed(rotation, &zero)).collect(),
            seeds: self.seeds.iter().map(|s| rotation * s).collect(),
            adjacency: self
                .adjacency
                .iter()
                .map(|f| SharedFace {
                    polygon: f.polygon.iter().map(|v| rotation * v).collect(),
                    normal: rotation * f.normal,
                    ..f.clone()
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Index of the seed nearest to `p` (ties to the lower index).
    pub fn nearest_seed(&self, p: &Vec3) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, s) in self.seeds.iter().enumerate() {
            let d = (p - s).norm_squared();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TessellationError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TessellationError::Parse(e.to_string()))?;
        let found = value
            .get("schema")
            .and_then(|s| s.as_str())
            .unwrap_or("")
            .to_string();
        if found != MESH_SCHEMA {
            return Err(TessellationError::Schema {
                expected: MESH_SCHEMA.to_string(),
                found,
            });
        }
        serde_json::from_value(value).map_err(|e| TessellationError::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sphere() -> EllipsoidSpec {
        EllipsoidSpec::new(2.0, [1.0, 1.0, 1.0])
    }

    #[test]
    fn seed_count_law() {
        assert_eq!(seed_count(11.86), 8);
        assert_eq!(seed_count(35.57), 216);
        assert_eq!(seed_count(23.72), 64);
        assert_eq!(seed_count(2.0), 8);
        assert_eq!(seed_count(100.0), 216);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let seeds = [Vec3::new(-0.4, 0.0, 0.0), Vec3::new(0.4, 0.0, 0.0)];
        // The faceted sphere is not mirror symmetric; the octahedron is.
        let particle = ConvexPolyhedron::regular_octahedron(1.0);
        let mesh = voronoi_in(&unit_sphere(), particle, &seeds).unwrap();
        let v0 = measure(&mesh.cells[0]).volume;
        let v1 = measure(&mesh.cells[1]).volume;
        assert!((v0 - v1).abs() < 1e-9);
        assert_eq!(mesh.adjacency.len(), 1);
        let f = &mesh.adjacency[0];
        assert_eq!((f.i, f.j), (0, 1));
        assert!((f.normal - Vec3::x()).norm() < 1e-12);
    }

    #[test]
    fn cube_corner_seeds_give_congruent_cells() {
        let mut seeds = Vec::new();
        for &x in &[-0.3, 0.3] {
            for &y in &[-0.3, 0.3] {
                for &z in &[-0.3, 0.3] {
                    seeds.push(Vec3::new(x, y, z));
                }
            }
        }
        // Reflection-symmetric sphere about all three coordinate planes.
        let particle = ConvexPolyhedron::regular_octahedron(1.0);
        let mesh = voronoi_in(&unit_sphere(), particle, &seeds).unwrap();
        let vols: Vec<f64> = mesh.cells.iter().map(|c| measure(c).volume).collect();
        for v in &vols {
            assert!((v - vols[0]).abs() < 1e-6);
        }
        assert_eq!(mesh.adjacency.len(), 12);
    }

    #[test]
    fn rejects_outside_seed_and_single_seed() {
        let spec = unit_sphere();
        assert_eq!(
            voronoi(&spec, &[Vec3::zeros()]),
            Err(TessellationError::TooFewSeeds(1))
        );
        assert_eq!(
            voronoi(&spec, &[Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]),
            Err(TessellationError::SeedOutside(1))
        );
    }

    #[test]
    fn partition_and_adjacency_areas() {
        let spec = EllipsoidSpec::new(16.0, [1.0, 0.9, 0.8]);
        let mesh = tessellate(&spec, 11, None).unwrap();
        let total: f64 = mesh.cells.iter().map(|c| measure(c).volume).sum();
        let particle = measure(&mesh.particle_poly).volume;
        assert!((total / particle - 1.0).abs() < 1e-6);
        mesh.check_connected().unwrap();
        for (i, cell) in mesh.cells.iter().enumerate() {
            cell.validate().unwrap();
            let internal: f64 = (0..cell.faces().len())
                .filter(|&f| cell.face_tags()[f].is_some())
                .map(|f| polygon_area(&cell.face_points(f)))
                .filter(|&a| a > MIN_SHARED_FACE_AREA)
                .sum();
            let shared: f64 = mesh
                .adjacency
                .iter()
                .filter(|f| f.i == i || f.j == i)
                .map(|f| f.area)
                .sum();
            assert!((internal - shared).abs() <= 1e-6 * internal.max(1.0));
        }
    }

    #[test]
    fn sampled_points_belong_to_their_nearest_seed() {
        let spec = EllipsoidSpec::new(14.0, [1.2, 1.0, 0.9]);
        let mesh = tessellate(&spec, 3, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = spec.semi_axes();
        let mut checked = 0;
        while checked < 100 {
            let p = Vec3::new(
                rng.random_range(-a.x..a.x),
                rng.random_range(-a.y..a.y),
                rng.random_range(-a.z..a.z),
            );
            if !mesh.particle_poly.contains(&p, -1e-9) {
                continue;
            }
            let owners: Vec<usize> = (0..mesh.n_cells())
                .filter(|&c| mesh.cells[c].contains(&p, 1e-9))
                .collect();
            assert!(owners.contains(&mesh.nearest_seed(&p)));
            checked += 1;
        }
    }

    #[test]
    fn lloyd_fixed_point_and_infinite_tolerance() {
        let seeds = [Vec3::new(-0.375, 0.0, 0.0), Vec3::new(0.375, 0.0, 0.0)];
        let mesh = voronoi(&unit_sphere(), &seeds).unwrap();
        let out = lloyd_refine(&mesh, 50, f64::INFINITY).unwrap();
        assert_eq!(out.cells, mesh.cells);
        assert_eq!(out.seeds, mesh.seeds);
        assert_eq!(out.lloyd_iterations, 0);
        assert_eq!(out.lloyd_history.len(), 1);
    }

    #[test]
    fn lloyd_converges_on_random_seeds() {
        let spec = EllipsoidSpec::new(11.86, [1.0, 1.0, 1.0]);
        let tol = 1e-3 * spec.diameter;
        let mesh = tessellate(&spec, 5, None).unwrap();
        let out = lloyd_refine(&mesh, 50, tol).unwrap();
        let last = *out.lloyd_history.last().unwrap();
        assert!(last < tol, "history {:?}", out.lloyd_history);
        assert!(out.lloyd_history[0] > last);
        out.check_connected().unwrap();
    }

    #[test]
    fn serialization_is_deterministic_and_round_trips() {
        let spec = EllipsoidSpec::new(12.5, [1.0, 1.0, 0.8]);
        let a = tessellate(&spec, 42, Some(LloydControl::default())).unwrap();
        let b = tessellate(&spec, 42, Some(LloydControl::default())).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = FragmentMesh::from_json(&a.to_json()).unwrap();
        assert_eq!(back.to_json(), a.to_json());
        let bad = a.to_json().replace(MESH_SCHEMA, "crushgraph.mesh/0");
        assert!(matches!(
            FragmentMesh::from_json(&bad),
            Err(TessellationError::Schema { .. })
        ));
    }
}
