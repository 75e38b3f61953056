use std::f64::consts::PI;

use crushgraph::features::{
    compute_edge_features, compute_node_features, compute_pmd, distance_features, pmd_names, pmd_registry, PMD_LEN,
};
use crushgraph::geometry::{
    ellipsoid_polyhedron, measure, polygon_area, rotation_from_euler_zxz, ConvexPolyhedron, EllipsoidSpec, Plane,
    Vec3,
};
use crushgraph::tessellation::{tessellate, voronoi};
use proptest::prelude::*;

fn ellipsoid(scale: [f64; 3]) -> ConvexPolyhedron {
    ellipsoid_polyhedron(&EllipsoidSpec::new(12.0, scale)).unwrap()
}

/// Length dimension of each descriptor.
fn dimension(name: &str) -> i32 {
    match name {
        "volume" => 3,
        "surface_area" => 2,
        "long_length" | "intermediate_length" | "short_length" | "equivalent_diameter" | "inscribed_diameter"
        | "circumscribed_diameter" | "mean_length" => 1,
        _ => 0,
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn registry_is_complete_and_ordered() {
    let reg = pmd_registry();
    assert_eq!(reg.len(), PMD_LEN);
    assert_eq!(pmd_names().len(), PMD_LEN);
    assert_eq!(reg.last().unwrap().name, "centroid_offset");
    let v = compute_pmd(&ellipsoid([1.3, 1.15, 1.0])).unwrap();
    assert_eq!(v.values.len(), PMD_LEN);
    assert!(v.values.iter().all(|x| x.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn descriptors_are_rotation_invariant(a in 0.0..6.3f64, b in 0.0..3.1f64, c in 0.0..6.3f64) {
        let poly = ellipsoid([1.3, 1.15, 1.0]);
        let r = rotation_from_euler_zxz(a, b, c);
        let base = compute_pmd(&poly).unwrap();
        let turned = compute_pmd(&poly.transformed(&r, &Vec3::new(3.0, -1.0, 2.0))).unwrap();
        for (name, (x, y)) in pmd_names().iter().zip(base.values.iter().zip(&turned.values)) {
            prop_assert!(close(*x, *y, 1e-6), "{}: {} vs {}", name, x, y);
        }
    }

    #[test]
    fn descriptors_follow_their_scale_law(k in 0.2..5.0f64) {
        let poly = ellipsoid([1.25, 1.1, 1.0]);
        let base = compute_pmd(&poly).unwrap();
        let scaled = compute_pmd(&poly.scaled(k)).unwrap();
        for (name, (x, y)) in pmd_names().iter().zip(base.values.iter().zip(&scaled.values)) {
            let expect = x * k.powi(dimension(name));
            prop_assert!(close(expect, *y, 1e-9), "{}: {} vs {}", name, expect, y);
        }
    }
}

#[test]
fn oblate_flatness_matches_axis_ratio() {
    let v = compute_pmd(&ellipsoid([1.4, 1.4, 1.0])).unwrap();
    let f = v.get("flatness").unwrap();
    assert!(close(f, 1.0 / 1.4, 0.02), "flatness {f}");
}

#[test]
fn derived_descriptors_recompute_from_base_quantities() {
    let v = compute_pmd(&ellipsoid([1.3, 1.1, 0.9])).unwrap();
    let g = |n: &str| v.get(n).unwrap();
    let (l, i, s) = (g("long_length"), g("intermediate_length"), g("short_length"));
    assert!(l >= i && i >= s);
    assert!(close(g("krumbein_sphericity"), (i * s / (l * l)).powf(1.0 / 3.0), 1e-12));
    assert!(close(g("corey_factor"), s / (l * i).sqrt(), 1e-12));
    assert!(close(g("elongation"), i / l, 1e-12));
    let (vol, area) = (g("volume"), g("surface_area"));
    let wadell = (36.0 * PI * vol * vol).powf(1.0 / 3.0) / area;
    assert!(close(g("wadell_sphericity"), wadell, 1e-12));
    assert!(close(g("equivalent_diameter"), (6.0 * vol / PI).powf(1.0 / 3.0), 1e-12));
    assert!(g("inscribed_diameter") < g("equivalent_diameter"));
    assert!(g("equivalent_diameter") < g("circumscribed_diameter"));
}

#[test]
fn cuboid_lengths_and_offset() {
    let poly = ConvexPolyhedron::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(6.0, 4.0, 2.0));
    let v = compute_pmd(&poly).unwrap();
    let g = |n: &str| v.get(n).unwrap();
    assert!(close(g("long_length"), 6.0, 1e-12));
    assert!(close(g("intermediate_length"), 4.0, 1e-12));
    assert!(close(g("short_length"), 2.0, 1e-12));
    assert!(close(g("inscribed_diameter"), 2.0, 1e-9));
    assert!(close(g("circumscribed_diameter"), 56f64.sqrt(), 1e-9));
    // Resting on its largest face the centroid sits over the face centre.
    assert!(g("centroid_offset").abs() < 1e-12);
    assert!(close(g("bulkiness"), 6.0 / PI, 1e-12));
}

fn two_cell_mesh() -> crushgraph::tessellation::FragmentMesh {
    let spec = EllipsoidSpec::new(10.0, [1.0, 1.0, 1.0]);
    voronoi(&spec, &[Vec3::new(-2.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)]).unwrap()
}

#[test]
fn mirror_cells_have_matching_features() {
    let mesh = two_cell_mesh();
    assert_eq!(mesh.n_cells(), 2);
    assert_eq!(mesh.adjacency.len(), 1);
    let (a, b) = (compute_node_features(&mesh, 0).unwrap(), compute_node_features(&mesh, 1).unwrap());
    // The faceted sphere is only approximately mirror symmetric.
    assert!(close(a.volume, b.volume, 1e-3));
    assert!(close(a.surface_area, b.surface_area, 1e-3));
    assert!(close(a.volume + b.volume, measure(&mesh.particle_poly).volume, 1e-9));
    assert_eq!((a.n_neighbors, b.n_neighbors), (1, 1));
    assert!((a.centroid + b.centroid).norm() < 1e-2);
    assert!(a.centroid.x < 0.0);
    assert!(compute_node_features(&mesh, 2).is_err());
}

#[test]
fn shared_face_matches_an_independent_cut() {
    let mesh = two_cell_mesh();
    let e = compute_edge_features(&mesh, 0).unwrap();
    let half = mesh.particle_poly.clip(&Plane::new(Vec3::x(), 0.0)).unwrap();
    let cap = (0..half.faces().len())
        .map(|f| half.face_points(f))
        .filter(|pts| pts.iter().all(|p| p.x.abs() < 1e-9))
        .map(|pts| polygon_area(&pts))
        .fold(0.0, f64::max);
    assert!(cap > 0.0);
    assert!(close(e.contact_area, cap, 1e-9), "{} vs {cap}", e.contact_area);
    assert!(close(e.contact_area, mesh.adjacency[0].area, 1e-12));
    assert!(e.centroid.x.abs() < 1e-9);
    assert!(e.n_lines >= 3);
    // Longest chord of a near-circular section of the particle.
    assert!(e.max_length <= measure(&mesh.particle_poly).diameter + 1e-9 && e.max_length > 9.5);
    assert!((mesh.adjacency[0].normal - Vec3::x()).norm() < 1e-9);
}

#[test]
fn distance_features_match_brute_force() {
    let mesh = tessellate(&EllipsoidSpec::new(16.85, [1.25, 1.1, 1.0]), 21, None).unwrap();
    let (per_node, particle) = distance_features(&mesh).unwrap();
    let c: Vec<Vec3> = mesh.cells.iter().map(|p| measure(p).centroid).collect();
    let n = c.len();
    assert!(n > 8);
    let largest = |mut pool: Vec<f64>| {
        let mut out = [0.0; 8];
        for slot in out.iter_mut() {
            let (k, v) = pool.iter().copied().enumerate().fold((0, f64::MIN), |b, (k, v)| if v > b.1 { (k, v) } else { b });
            *slot = v;
            pool.swap_remove(k);
        }
        out
    };
    for a in 0..n {
        let pool = (0..n).filter(|&b| b != a).map(|b| (c[a] - c[b]).norm()).collect();
        assert_eq!(per_node[a], largest(pool));
    }
    let pairs = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| (a, b))).map(|(a, b)| (c[a] - c[b]).norm()).collect();
    assert_eq!(particle, largest(pairs));
}

#[test]
fn too_few_cells_pad_or_fail() {
    let mesh = two_cell_mesh();
    let (per_node, particle) = distance_features(&mesh).unwrap();
    assert!(per_node[0][0] > 0.0 && per_node[0][1..].iter().all(|v| *v == 0.0));
    assert_eq!(per_node[0][0], particle[0]);
}
