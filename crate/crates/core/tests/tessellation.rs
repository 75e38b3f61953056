use crushgraph::dataset::{parse_shape, TABLE_DIAMETERS, TABLE_SHAPES};
use crushgraph::geometry::{measure, rotation_from_euler_zxz, EllipsoidSpec, Plane, Vec3};
use crushgraph::tessellation::{seed_count, tessellate, FragmentMesh, LloydControl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_particle(rng: &mut ChaCha8Rng) -> EllipsoidSpec {
    let d = TABLE_DIAMETERS[rng.random_range(0..TABLE_DIAMETERS.len())];
    let shape = parse_shape(TABLE_SHAPES[rng.random_range(0..TABLE_SHAPES.len())]).unwrap();
    EllipsoidSpec::new(d, shape)
}

#[test]
fn cells_partition_the_particle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for k in 0..50 {
        let spec = random_particle(&mut rng);
        let mesh = tessellate(&spec, 1000 + k, None).unwrap();
        assert_eq!(mesh.n_cells(), seed_count(spec.diameter));
        let total: f64 = mesh.cells.iter().map(|c| measure(c).volume).sum();
        let whole = measure(&mesh.particle_poly).volume;
        assert!((total / whole - 1.0).abs() < 1e-6, "particle {k}: {total} vs {whole}");
        mesh.check_connected().unwrap();
    }
}

#[test]
fn cell_count_grows_cubically() {
    assert_eq!(seed_count(11.86), 8);
    assert_eq!(seed_count(35.57), 216);
    assert_eq!(seed_count(5.0), 8);
    assert_eq!(seed_count(80.0), 216);
    let mut last = 0;
    for d in TABLE_DIAMETERS {
        assert!(seed_count(d) >= last);
        last = seed_count(d);
    }
}

#[test]
fn points_fall_in_their_nearest_seed_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for k in 0..20 {
        let spec = random_particle(&mut rng);
        let mesh = tessellate(&spec, 2000 + k, None).unwrap();
        let a = spec.semi_axes();
        let mut hits = 0;
        while hits < 100 {
            let p = Vec3::new(
                rng.random_range(-a.x..a.x),
                rng.random_range(-a.y..a.y),
                rng.random_range(-a.z..a.z),
            );
            if !mesh.particle_poly.contains(&p, -1e-9) {
                continue;
            }
            hits += 1;
            // Brute-force nearest seed, then check that cell owns the point.
            let owner = (0..mesh.seeds.len())
                .min_by(|&i, &j| (p - mesh.seeds[i]).norm().total_cmp(&(p - mesh.seeds[j]).norm()))
                .unwrap();
            assert_eq!(owner, mesh.nearest_seed(&p));
            assert!(mesh.cells[owner].contains(&p, 1e-9 * spec.diameter));
        }
    }
}

#[test]
fn shared_faces_lie_on_bisectors() {
    let mesh = tessellate(&EllipsoidSpec::new(21.84, [1.25, 1.2, 1.0]), 7, None).unwrap();
    for f in &mesh.adjacency {
        let plane = Plane::bisector(&mesh.seeds[f.i], &mesh.seeds[f.j]);
        assert!(f.polygon.iter().all(|p| plane.signed_distance(p).abs() < 1e-9));
        assert!(f.area > 0.0 && f.i < f.j);
    }
}

#[test]
fn rotation_moves_geometry_rigidly() {
    let mesh = tessellate(&EllipsoidSpec::new(16.85, [1.0, 1.0, 1.0]), 8, None).unwrap();
    let turned = mesh.rotated(&rotation_from_euler_zxz(0.4, 1.2, -2.0));
    for (a, b) in mesh.cells.iter().zip(&turned.cells) {
        assert!((measure(a).volume - measure(b).volume).abs() < 1e-9);
    }
    for (a, b) in mesh.adjacency.iter().zip(&turned.adjacency) {
        assert_eq!((a.i, a.j), (b.i, b.j));
    }
}

#[test]
fn lloyd_reduces_seed_drift_and_keeps_partition() {
    let spec = EllipsoidSpec::new(16.85, [1.2, 1.0, 1.0]);
    let mesh = tessellate(&spec, 9, Some(LloydControl { max_iters: 10, tol_rel: 1e-4 })).unwrap();
    let h = &mesh.lloyd_history;
    assert!(h.len() >= 2 && h.last().unwrap() < &h[0]);
    let total: f64 = mesh.cells.iter().map(|c| measure(c).volume).sum();
    assert!((total / measure(&mesh.particle_poly).volume - 1.0).abs() < 1e-6);
}

#[test]
fn mesh_file_round_trips() {
    let mesh = tessellate(&EllipsoidSpec::new(11.86, [1.0, 1.0, 1.0]), 10, None).unwrap();
    let text = mesh.to_json();
    let back = FragmentMesh::from_json(&text).unwrap();
    assert_eq!(back, mesh);
    assert_eq!(back.to_json(), text);
    assert!(FragmentMesh::from_json(&text.replace("crushgraph.mesh/1", "crushgraph.mesh/0")).is_err());
}
