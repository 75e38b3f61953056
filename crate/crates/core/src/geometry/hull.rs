use std::collections::HashMap;

use super::{ConvexPolyhedron, GeometryError, Vec3};

/// Incremental 3D convex hull. Faces are triangles oriented outward;
/// interior and coplanar-on-hull points are dropped.
pub fn convex_hull(points: &[Vec3]) -> Result<ConvexPolyhedron, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::DegeneratePoints);
    }
    let scale = points
        .iter()
        .map(|p| p.amax())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let eps = 1e-11 * scale;

    let [a, b, c, d] = initial_simplex(points, eps)?;
    let interior = (points[a] + points[b] + points[c] + points[d]) / 4.0;

    let mut faces: Vec<Option<[usize; 3]>> = Vec::new();
    let push_face = |faces: &mut Vec<Option<[usize; 3]>>, f: [usize; 3]| {
        let n = tri_normal(points, f);
        if n.dot(&(points[f[0]] - interior)) < 0.0 {
            faces.push(Some([f[0], f[2], f[1]]));
        } else {
            faces.push(Some(f));
        }
    };
    push_face(&mut faces, [a, b, c]);
    push_face(&mut faces, [a, b, d]);
    push_face(&mut faces, [a, c, d]);
    push_face(&mut faces, [b, c, d]);

    for (p, point) in points.iter().enumerate() {
        if p == a || p == b || p == c || p == d {
            continue;
        }
        let visible: Vec<usize> = faces
            .iter()
            .enumerate()
            .filter_map(|(fi, f)| {
                let f = (*f)?;
                let n = tri_normal(points, f).normalize();
                (n.dot(&(point - points[f[0]])) > eps).then_some(fi)
            })
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Directed edges of visible faces; a horizon edge has no visible twin.
        let mut directed: HashMap<(usize, usize), ()> = HashMap::new();
        for &fi in &visible {
            let f = faces[fi].unwrap();
            for k in 0..3 {
                directed.insert((f[k], f[(k + 1) % 3]), ());
            }
        }
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let f = faces[fi].unwrap();
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if !directed.contains_key(&(e.1, e.0)) {
                    horizon.push(e);
                }
            }
        }
        for &fi in &visible {
            faces[fi] = None;
        }
        for (u, v) in horizon {
            faces.push(Some([u, v, p]));
        }
    }

    let tris: Vec<[usize; 3]> = faces.into_iter().flatten().collect();
    let mut remap = vec![usize::MAX; points.len()];
    let mut vertices = Vec::new();
    let mut rings = Vec::with_capacity(tris.len());
    for t in tris {
        let mut ring = Vec::with_capacity(3);
        for i in t {
            if remap[i] == usize::MAX {
                remap[i] = vertices.len();
                vertices.push(points[i]);
            }
            ring.push(remap[i]);
        }
        rings.push(ring);
    }
    let n = rings.len();
    Ok(ConvexPolyhedron::from_raw(vertices, rings, vec![None; n]))
}

fn tri_normal(points: &[Vec3], f: [usize; 3]) -> Vec3 {
    (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]))
}

fn initial_simplex(points: &[Vec3], eps: f64) -> Result<[usize; 4], GeometryError> {
    let a = (0..points.len())
        .min_by(|&i, &j| {
            points[i]
                .x
                .total_cmp(&points[j].x)
                .then(points[i].y.total_cmp(&points[j].y))
        })
        .unwrap();
    let farthest = |score: &dyn Fn(&Vec3) -> f64| {
        (0..points.len())
            .max_by(|&i, &j| score(&points[i]).total_cmp(&score(&points[j])))
            .unwrap()
    };
    let b = farthest(&|p| (p - points[a]).norm());
    let ab = points[b] - points[a];
    if ab.norm() <= eps {
        return Err(GeometryError::DegeneratePoints);
    }
    let c = farthest(&|p| ab.cross(&(p - points[a])).norm());
    let n = ab.cross(&(points[c] - points[a]));
    if n.norm() <= eps * ab.norm() {
        return Err(GeometryError::DegeneratePoints);
    }
    let nn = n.normalize();
    let d = farthest(&|p| nn.dot(&(p - points[a])).abs());
    if nn.dot(&(points[d] - points[a])).abs() <= eps {
        return Err(GeometryError::DegeneratePoints);
    }
    Ok([a, b, c, d])
}
