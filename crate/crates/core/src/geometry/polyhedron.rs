use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{measure::polygon_normal, GeometryError, Mat3, Vec3};
use crate::tolerances::{MERGE_EPS, PLANE_EPS, VALIDATE_EPS};

/// Oriented plane `{x : normal . x = offset}`; the inside half-space is
/// `normal . x <= offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    /// Builds a plane from any non-zero normal, normalising it.
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let len = normal.norm();
        Self {
            normal: normal / len,
            offset: offset / len,
        }
    }

    pub fn through(normal: Vec3, point: &Vec3) -> Self {
        let n = normal.normalize();
        Self {
            normal: n,
            offset: n.dot(point),
        }
    }

    /// Perpendicular bisector of `a` and `b`, with `a` on the inside.
    pub fn bisector(a: &Vec3, b: &Vec3) -> Self {
        let n = (b - a).normalize();
        Self {
            normal: n,
            offset: n.dot(&((a + b) * 0.5)),
        }
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn flipped(&self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }
}

/// Result of clipping a polyhedron by a half-space.
#[derive(Debug, Clone)]
pub enum Clipped {
    /// The half-space contains the whole polyhedron.
    Unchanged,
    /// No vertex lies strictly inside the half-space.
    Empty,
    Cut(ConvexPolyhedron),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolyhedron {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
    tags: Vec<Option<usize>>,
}

impl ConvexPolyhedron {
    pub(crate) fn from_raw(
        vertices: Vec<Vec3>,
        faces: Vec<Vec<usize>>,
        tags: Vec<Option<usize>>,
    ) -> Self {
        debug_assert_eq!(faces.len(), tags.len());
        Self {
            vertices,
            faces,
            tags,
        }
    }

    /// Builds and validates a polyhedron from vertices and CCW face rings.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<Vec<usize>>) -> Result<Self, GeometryError> {
        let tags = vec![None; faces.len()];
        let p = Self::from_raw(vertices, faces, tags);
        p.validate()?;
        Ok(p)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    /// Per-face tags, parallel to [`faces`](Self::faces).
    pub fn face_tags(&self) -> &[Option<usize>] {
        &self.tags
    }

    pub fn face_points(&self, face: usize) -> Vec<Vec3> {
        self.faces[face].iter().map(|&i| self.vertices[i]).collect()
    }

    /// Outward unit normal of a face (Newell's method).
    pub fn face_normal(&self, face: usize) -> Vec3 {
        polygon_normal(&self.face_points(face))
    }

    pub fn face_plane(&self, face: usize) -> Plane {
        let pts = self.face_points(face);
        let n = polygon_normal(&pts);
        let c = pts.iter().sum::<Vec3>() / pts.len() as f64;
        Plane::through(n, &c)
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges = std::collections::HashSet::new();
        for ring in &self.faces {
            for k in 0..ring.len() {
                let (a, b) = (ring[k], ring[(k + 1) % ring.len()]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges.len()
    }

    /// Checks ring sizes, coplanarity, convexity and Euler's formula.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidPolyhedron(m));
        if self.faces.len() < 4 || self.vertices.len() < 4 {
            return bad("fewer than 4 faces or vertices".into());
        }
        for (f, ring) in self.faces.iter().enumerate() {
            if ring.len() < 3 {
                return bad(format!("face {f} has {} vertices", ring.len()));
            }
            if ring.iter().any(|&i| i >= self.vertices.len()) {
                return bad(format!("face {f} indexes a missing vertex"));
            }
            let plane = self.face_plane(f);
            for &i in ring {
                if plane.signed_distance(&self.vertices[i]).abs() > VALIDATE_EPS {
                    return bad(format!("face {f} is not planar"));
                }
            }
            for (i, v) in self.vertices.iter().enumerate() {
                if plane.signed_distance(v) > VALIDATE_EPS {
                    return bad(format!("vertex {i} lies outside face {f}"));
                }
            }
        }
        let euler =
            self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64;
        if euler != 2 {
            return bad(format!("Euler characteristic {euler}"));
        }
        Ok(())
    }

    /// Axis-aligned box.
    pub fn cuboid(min: Vec3, max: Vec3) -> Self {
        let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
        let vertices = vec![
            v(min.x, min.y, min.z),
            v(max.x, min.y, min.z),
            v(max.x, max.y, min.z),
            v(min.x, max.y, min.z),
            v(min.x, min.y, max.z),
            v(max.x, min.y, max.z),
            v(max.x, max.y, max.z),
            v(min.x, max.y, max.z),
        ];
        let faces = vec![
            vec![0, 3, 2, 1],
            vec![4, 5, 6, 7],
            vec![0, 1, 5, 4],
            vec![2, 3, 7, 6],
            vec![1, 2, 6, 5],
            vec![0, 4, 7, 3],
        ];
        Self::from_raw(vertices, faces, vec![None; 6])
    }

    pub fn unit_cube() -> Self {
        Self::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0))
    }

    /// Regular tetrahedron with the given edge length, centred at the origin.
    pub fn regular_tetrahedron(edge: f64) -> Self {
        let s = edge / (2.0 * 2f64.sqrt());
        let vertices = vec![
            Vec3::new(s, s, s),
            Vec3::new(s, -s, -s),
            Vec3::new(-s, s, -s),
            Vec3::new(-s, -s, s),
        ];
        let mut faces = vec![vec![0, 1, 2], vec![0, 3, 1], vec![0, 2, 3], vec![1, 3, 2]];
        orient_outward(&vertices, &mut faces);
        Self::from_raw(vertices, faces, vec![None; 4])
    }

    /// Regular octahedron with circumradius `r`, centred at the origin.
    pub fn regular_octahedron(r: f64) -> Self {
        let vertices = vec![
            Vec3::new(r, 0.0, 0.0),
            Vec3::new(-r, 0.0, 0.0),
            Vec3::new(0.0, r, 0.0),
            Vec3::new(0.0, -r, 0.0),
            Vec3::new(0.0, 0.0, r),
            Vec3::new(0.0, 0.0, -r),
        ];
        let mut faces = vec![
            vec![0, 2, 4],
            vec![2, 1, 4],
            vec![1, 3, 4],
            vec![3, 0, 4],
            vec![2, 0, 5],
            vec![1, 2, 5],
            vec![3, 1, 5],
            vec![0, 3, 5],
        ];
        orient_outward(&vertices, &mut faces);
        Self::from_raw(vertices, faces, vec![None; 8])
    }

    /// Applies `x -> rotation * x + translation`; `rotation` must be proper.
    pub fn transformed(&self, rotation: &Mat3, translation: &Vec3) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * v + translation)
                .collect(),
            faces: self.faces.clone(),
            tags: self.tags.clone(),
        }
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            faces: self.faces.clone(),
            tags: self.tags.clone(),
        }
    }

    /// Point containment with tolerance `eps` outside the face planes.
    pub fn contains(&self, p: &Vec3, eps: f64) -> bool {
        (0..self.faces.len()).all(|f| self.face_plane(f).signed_distance(p) <= eps)
    }

    /// Largest distance from `p` to any vertex.
    pub fn max_distance_from(&self, p: &Vec3) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - p).norm())
            .fold(0.0, f64::max)
    }

    /// Intersection with `{x : plane.normal . x <= plane.offset}`.
    pub fn clip(&self, plane: &Plane) -> Option<ConvexPolyhedron> {
        match self.clip_tagged(plane, None) {
            Clipped::Unchanged => Some(self.clone()),
            Clipped::Empty => None,
            Clipped::Cut(p) => Some(p),
        }
    }

    /// Clips and stamps `tag` onto the new cap face.
    pub fn clip_tagged(&self, plane: &Plane, tag: Option<usize>) -> Clipped {
        let dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| plane.signed_distance(v))
            .collect();
        if dist.iter().all(|&d| d <= PLANE_EPS) {
            return Clipped::Unchanged;
        }
        if dist.iter().all(|&d| d >= -PLANE_EPS) {
            return Clipped::Empty;
        }

        let inside = |i: usize| dist[i] <= PLANE_EPS;
        let mut vertices: Vec<Vec3> = Vec::with_capacity(self.vertices.len() + 8);
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut on_plane: Vec<usize> = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if inside(i) {
                remap[i] = vertices.len();
                if dist[i] >= -PLANE_EPS {
                    on_plane.push(vertices.len());
                }
                vertices.push(*v);
            }
        }

        let mut crossings: HashMap<(usize, usize), usize> = HashMap::new();
        let mut crossing = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            // `a` inside, `b` outside.
            if dist[a] >= -PLANE_EPS {
                return remap[a];
            }
            let key = (a.min(b), a.max(b));
            *crossings.entry(key).or_insert_with(|| {
                let (pa, pb) = (self.vertices[a], self.vertices[b]);
                let t = dist[a] / (dist[a] - dist[b]);
                let idx = vertices.len();
                vertices.push(pa + (pb - pa) * t);
                on_plane.push(idx);
                idx
            })
        };

        let mut faces: Vec<Vec<usize>> = Vec::with_capacity(self.faces.len() + 1);
        let mut tags: Vec<Option<usize>> = Vec::with_capacity(self.faces.len() + 1);
        for (ring, ftag) in self.faces.iter().zip(&self.tags) {
            let mut out = Vec::with_capacity(ring.len() + 2);
            for k in 0..ring.len() {
                let cur = ring[k];
                let next = ring[(k + 1) % ring.len()];
                match (inside(cur), inside(next)) {
                    (true, true) => out.push(remap[cur]),
                    (true, false) => {
                        out.push(remap[cur]);
                        out.push(crossing(cur, next, &mut vertices));
                    }
                    (false, true) => out.push(crossing(next, cur, &mut vertices)),
                    (false, false) => {}
                }
            }
            dedup_ring(&mut out);
            if out.len() >= 3 {
                faces.push(out);
                tags.push(*ftag);
            }
        }

        on_plane.sort_unstable();
        on_plane.dedup();
        if on_plane.len() >= 3 {
            let cap = order_ccw(&vertices, &on_plane, &plane.normal);
            faces.push(cap);
            tags.push(tag);
        }

        let mut poly = ConvexPolyhedron {
            vertices,
            faces,
            tags,
        };
        poly.merge_close_vertices();
        poly.compact();
        if poly.faces.len() < 4 {
            return Clipped::Empty;
        }
        Clipped::Cut(poly)
    }

    fn merge_close_vertices(&mut self) {
        let n = self.vertices.len();
        let mut target: Vec<usize> = (0..n).collect();
        let mut any = false;
        for i in 0..n {
            if target[i] != i {
                continue;
            }
            for j in (i + 1)..n {
                if target[j] == j && (self.vertices[i] - self.vertices[j]).norm() < MERGE_EPS {
                    target[j] = i;
                    any = true;
                }
            }
        }
        if !any {
            return;
        }
        let mut faces = Vec::with_capacity(self.faces.len());
        let mut tags = Vec::with_capacity(self.faces.len());
        for (ring, tag) in self.faces.iter().zip(&self.tags) {
            let mut r: Vec<usize> = ring.iter().map(|&i| target[i]).collect();
            dedup_ring(&mut r);
            if r.len() >= 3 {
                faces.push(r);
                tags.push(*tag);
            }
        }
        self.faces = faces;
        self.tags = tags;
    }

    /// Drops unreferenced vertices and renumbers.
    fn compact(&mut self) {
        let mut used = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::with_capacity(self.vertices.len());
        for ring in &mut self.faces {
            for i in ring.iter_mut() {
                if used[*i] == usize::MAX {
                    used[*i] = vertices.len();
                    vertices.push(self.vertices[*i]);
                }
                *i = used[*i];
            }
        }
        self.vertices = vertices;
    }
}

fn dedup_ring(ring: &mut Vec<usize>) {
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
}

/// Sorts coplanar points counter-clockwise as seen from the `normal` side.
fn order_ccw(vertices: &[Vec3], idx: &[usize], normal: &Vec3) -> Vec<usize> {
    let c = idx.iter().map(|&i| vertices[i]).sum::<Vec3>() / idx.len() as f64;
    let helper = if normal.x.abs() < 0.9 {
        Vec3::x()
    } else {
        Vec3::y()
    };
    let e1 = normal.cross(&helper).normalize();
    let e2 = normal.cross(&e1);
    let mut keyed: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| {
            let d = vertices[i] - c;
            (d.dot(&e2).atan2(d.dot(&e1)), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn orient_outward(vertices: &[Vec3], faces: &mut [Vec<usize>]) {
    let c = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
    for ring in faces.iter_mut() {
        let pts: Vec<Vec3> = ring.iter().map(|&i| vertices[i]).collect();
        let n = polygon_normal(&pts);
        if n.dot(&(pts[0] - c)) < 0.0 {
            ring.reverse();
        }
    }
}
