use crushgraph::dataset::{generate, DatasetConfig, ParticleSpec};
use crushgraph::features::compute_pmd;
use crushgraph::graphset::{
    build_graph, edge_feature_names, graph_feature_names, make_split, node_feature_names, FragmentGraph, Part,
    SplitConfig, Task, EDGE_DIM, GRAPH_DIM, NODE_DIM,
};
use crushgraph::simulator::Axis;
use crushgraph::tessellation::tessellate;

fn specs() -> Vec<ParticleSpec> {
    let config = DatasetConfig {
        diameters: vec![11.86, 13.1],
        shapes: vec!["1,1,1".into(), "1.25,1.44/1.25,1".into()],
        axes: vec![Axis::X, Axis::Y, Axis::Z],
        tests_per_type: 2,
    };
    generate(&config, 5).unwrap()
}

fn graph_of(spec: &ParticleSpec, k: usize, label: f64) -> FragmentGraph {
    let mesh = tessellate(&spec.ellipsoid(), spec.test_seed(k), None).unwrap();
    let pmd = compute_pmd(&mesh.particle_poly).unwrap();
    build_graph(&mesh, spec, &spec.test_id(k), &pmd, label).unwrap()
}

#[test]
fn graph_dimensions_and_names() {
    let spec = &specs()[0];
    let g = graph_of(spec, 0, 12.5);
    let n = g.nodes.len();
    assert!(n >= 8);
    assert!(g.nodes.iter().all(|r| r.len() == NODE_DIM));
    assert_eq!(g.edges.len(), g.edge_features.len());
    assert!(g.edge_features.iter().all(|r| r.len() == EDGE_DIM));
    assert_eq!(g.graph.len(), GRAPH_DIM);
    assert_eq!(node_feature_names().len(), NODE_DIM);
    assert_eq!(edge_feature_names().len(), EDGE_DIM);
    assert_eq!(graph_feature_names().len(), GRAPH_DIM);
    assert!(g.edges.iter().all(|&(i, j)| i < j && j < n));
    assert_eq!(g.label, 12.5);
}

#[test]
fn json_round_trip_and_schema_check() {
    let g = graph_of(&specs()[1], 1, 9.0);
    let line = g.to_json();
    assert!(!line.contains('\n'));
    assert_eq!(FragmentGraph::from_json(&line).unwrap(), g);
    assert!(FragmentGraph::from_json(&line.replace("crushgraph.graph/1", "crushgraph.graph/9")).is_err());
}

#[test]
fn axis_changes_frame_not_cells() {
    let all = specs();
    let x = all.iter().find(|s| s.axis == Axis::X).unwrap();
    let z = ParticleSpec { axis: Axis::Z, ..x.clone() };
    let (gx, gz) = (graph_of(x, 0, 1.0), graph_of(&z, 0, 1.0));
    for (a, b) in gx.graph.iter().zip(&gz.graph) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    for (a, b) in gx.nodes.iter().zip(&gz.nodes) {
        // Volume, area, diameter, face and neighbour counts.
        for c in 0..5 {
            assert!((a[c] - b[c]).abs() <= 1e-9 * a[c].abs().max(1.0));
        }
        let (ra, rb) = (a[5..8].iter().map(|v| v * v).sum::<f64>(), b[5..8].iter().map(|v| v * v).sum::<f64>());
        assert!((ra - rb).abs() < 1e-9);
    }
    assert_ne!(gx.nodes, gz.nodes);
}

fn dataset() -> Vec<FragmentGraph> {
    specs()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..2).map(move |k| (i, s, k)))
        .map(|(i, s, k)| graph_of(s, k, 5.0 + i as f64))
        .collect()
}

#[test]
fn splits_hold_out_one_dimension() {
    let data = dataset();
    let cfg = SplitConfig {
        test_diameters: vec![13.1],
        test_shapes: vec!["1.25,1.44/1.25,1".into()],
        test_axes: vec![Axis::Y],
        val_fraction: 0.2,
    };
    for task in Task::ALL {
        let split = make_split(task, &data, &cfg, 3).unwrap();
        assert_eq!(split, make_split(task, &data, &cfg, 3).unwrap());
        for g in &data {
            let held = match task {
                Task::Diameter => g.diameter == 13.1,
                Task::Shape => g.shape == "1.25,1.44/1.25,1",
                Task::Axis => g.axis == Axis::Y,
            };
            let part = split.part_of(&g.type_id).unwrap();
            assert_eq!(held, part == Part::Test, "{task:?} {}", g.type_id);
        }
        assert!(!split.val.is_empty());
        assert!(split.val.iter().all(|t| !split.train.contains(t)));
        // Standardisation is fitted on training graphs only.
        let train = split.select(&data, Part::Train);
        for c in 0..GRAPH_DIM {
            let mean = train.iter().map(|g| g.graph[c]).sum::<f64>() / train.len() as f64;
            assert!(mean.abs() < 1e-6, "{task:?} column {c} mean {mean}");
        }
        assert!(train.iter().all(|g| g.label >= 5.0));
    }
}
